use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    avatarforge_core::cli::run_from_args(std::env::args_os())
}
