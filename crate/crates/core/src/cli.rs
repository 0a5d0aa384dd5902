//! `avatarforge` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::bodymodel::{capsule, PoseShapeParams};
use crate::deform::SpaceKind;
use crate::error::{Error, Result};
use crate::field::{self, GradientMode};
use crate::meshexport::{extract_mesh, write_mesh, ExtractionConfig, MeshFormat};
use crate::render::{iou, rasterize_mask, write_avim, write_png, write_preview_png, Camera, Orbit};
use crate::trainer::{self, Checkpoint, DenoiserConfig, TrainConfig, TrainOutputs, Trainer};
use crate::guidance::{MockTarget, RemoteConfig};
use crate::Vec3;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DENOISER: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "avatarforge", version, about = "Dual-space score-distillation avatar optimisation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory for all artifacts and the manifest.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Config override as a dot path, e.g. `--set render_resolution=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct FieldSource {
    /// Training config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to load; zero-initialised field otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Observation pose (JSON with `beta`, `xi`, `global_translation`).
    #[arg(long)]
    pub pose: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenoiserKind {
    Mock,
    Echo,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Canonical,
    Observation,
}

impl From<SpaceArg> for SpaceKind {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Canonical => SpaceKind::Canonical,
            SpaceArg::Observation => SpaceKind::Observation,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Obj,
    Ply,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimise a field; writes checkpoints, previews and the loss CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        denoiser: Option<DenoiserKind>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render a latent preview, raw image and silhouette.
    Render {
        #[command(flatten)]
        source: FieldSource,
        #[arg(long, value_enum, default_value = "observation")]
        space: SpaceArg,
        #[arg(long, default_value_t = 0.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0)]
        elevation: f64,
        #[arg(long, default_value_t = 1.5)]
        radius: f64,
        #[arg(long, default_value_t = 60.0)]
        fov: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Extract the density isosurface as a mesh.
    ExportMesh {
        #[command(flatten)]
        source: FieldSource,
        #[arg(long, value_enum, default_value = "canonical")]
        space: SpaceArg,
        #[arg(long, default_value_t = 25.0)]
        iso: f64,
        /// Grid points per axis.
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, value_enum, default_value = "obj")]
        format: FormatArg,
        #[command(flatten)]
        common: Common,
    },
    /// Print the field sample at a point as JSON.
    Probe {
        #[command(flatten)]
        source: FieldSource,
        /// `x,y,z` inside `[-1, 1]³`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: [f64; 3],
        #[arg(long, value_enum, default_value = "canonical")]
        space: SpaceArg,
        #[command(flatten)]
        common: Common,
    },
    /// Write the built-in capsule-person body asset.
    GenAsset {
        /// Asset file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Denoiser(_) => EXIT_DENOISER,
        Error::Numeric(_) | Error::SingularTransform { .. } | Error::MissingGradient(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            denoiser,
            resume,
            common,
        } => generate(&config, denoiser, resume.as_deref(), &common),
        Command::Render {
            source,
            space,
            azimuth,
            elevation,
            radius,
            fov,
            resolution,
            common,
        } => {
            let orbit = Orbit {
                radius,
                elevation_deg: elevation,
                azimuth_deg: azimuth,
                fov_deg: fov,
            };
            render_cmd(&source, space.into(), &orbit, resolution, &common)
        }
        Command::ExportMesh {
            source,
            space,
            iso,
            resolution,
            format,
            common,
        } => {
            let cfg = ExtractionConfig {
                grid_resolution: resolution,
                iso_level: iso,
                space: space.into(),
            };
            export_mesh_cmd(&source, &cfg, format, &common)
        }
        Command::Probe {
            source,
            point,
            space,
            common,
        } => {
            let v = probe(&source, &point, space.into(), &common)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
        Command::GenAsset { out } => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            capsule::capsule_person().save(&out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn set_threads(common: &Common) {
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
}

/// Sets `path` (dot separated) in a JSON object to `value`, parsed as JSON
/// when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, arg: &str) -> Result<()> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{arg}' is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{k}' is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert_with(|| json!({}));
    }
    Ok(())
}

fn read_json(path: &Path, what: &str) -> Result<Value> {
    if !path.exists() {
        return Err(Error::Config(format!("{what} not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what} {}: {e}", path.display())))
}

/// Builds a config from an optional file, dot-path overrides and `--seed`.
pub fn load_config(path: Option<&Path>, common: &Common) -> Result<TrainConfig> {
    let mut v = match path {
        Some(p) => read_json(p, "config")?,
        None => serde_json::to_value(TrainConfig::default())?,
    };
    for o in &common.overrides {
        apply_override(&mut v, o)?;
    }
    let mut cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Error::Config(format!("config: {e}")))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let DenoiserConfig::Remote(r) = &mut cfg.denoiser {
        *r = r.clone().with_env_override();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_pose(path: &Path) -> Result<PoseShapeParams> {
    let v = read_json(path, "pose")?;
    serde_json::from_value(v).map_err(|e| Error::Config(format!("pose {}: {e}", path.display())))
}

fn write_manifest(common: &Common, command: &str, extra: Value, artifacts: &[PathBuf]) -> Result<()> {
    let names: Vec<String> = artifacts.iter().map(|p| p.display().to_string()).collect();
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": common.seed,
        "artifacts": names,
        "details": extra,
    });
    std::fs::write(common.out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn generate(config: &Path, denoiser: Option<DenoiserKind>, resume: Option<&Path>, common: &Common) -> Result<()> {
    set_threads(common);
    let mut cfg = load_config(Some(config), common)?;
    match denoiser {
        Some(DenoiserKind::Mock) if !matches!(cfg.denoiser, DenoiserConfig::Mock { .. }) => {
            cfg.denoiser = DenoiserConfig::Mock {
                target: MockTarget::Flat([0.4; 4]),
            }
        }
        Some(DenoiserKind::Echo) => cfg.denoiser = DenoiserConfig::Echo,
        Some(DenoiserKind::Remote) if !matches!(cfg.denoiser, DenoiserConfig::Remote(_)) => {
            cfg.denoiser = DenoiserConfig::Remote(RemoteConfig::default().with_env_override())
        }
        _ => {}
    }
    if let DenoiserConfig::Remote(r) = &cfg.denoiser {
        let client = crate::guidance::RemoteDenoiser::new(r.clone());
        let model = client.health()?;
        log::info!("denoiser bridge at {} serves {model}", r.url);
    }
    let mut trainer = match resume {
        Some(p) => {
            let mut state = Checkpoint::load(p)?;
            state.config.iterations = cfg.iterations;
            state.config.denoiser = cfg.denoiser.clone();
            Trainer::from_checkpoint(state, None)?
        }
        None => Trainer::new(&cfg)?,
    };
    let out = TrainOutputs { dir: common.out.clone() };
    let summary = trainer::train(&mut trainer, &out)?;
    let mut artifacts = summary.checkpoints.clone();
    artifacts.extend(summary.previews.iter().cloned());
    artifacts.push(out.csv());
    let last = summary.reports.last();
    write_manifest(
        common,
        "generate",
        json!({
            "steps": trainer.state.step,
            "denoiser": trainer.denoiser.name(),
            "final_report": last,
        }),
        &artifacts,
    )?;
    println!("{}", out.final_checkpoint().display());
    Ok(())
}

/// Trainer for a field source: checkpoint state, or zero-init from config.
fn source_trainer(source: &FieldSource, common: &Common) -> Result<Trainer> {
    let mut state = match &source.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => Checkpoint::init(&load_config(source.config.as_deref(), common)?),
    };
    if let Some(p) = &source.pose {
        state.config.observation_pose = Some(load_pose(p)?);
    }
    // rendering never queries the denoiser
    Trainer::from_checkpoint(state, Some(Box::new(crate::guidance::EchoDenoiser)))
}

fn render_cmd(source: &FieldSource, space: SpaceKind, orbit: &Orbit, res: usize, common: &Common) -> Result<()> {
    set_threads(common);
    let tr = source_trainer(source, common)?;
    std::fs::create_dir_all(&common.out)?;
    let cam = Camera::orbit(orbit, [0.0; 3], res, res);
    let img = tr.render_eval(space, &cam)?;
    let preview = common.out.join(format!("render_{space}.png"));
    let raw = common.out.join(format!("render_{space}.avim"));
    let sil = common.out.join(format!("silhouette_{space}.png"));
    write_preview_png(&img, &preview)?;
    write_avim(&img, &raw)?;
    let gray: Vec<u8> = img
        .opacity
        .iter()
        .flat_map(|&o| [(o.clamp(0.0, 1.0) * 255.0).round() as u8; 3])
        .collect();
    write_png(&sil, res, res, &gray)?;
    let body = &tr.space(space).body;
    let mask = rasterize_mask(&body.vertices, &body.faces, &cam);
    let mask_iou = iou(&img.mask(0.5), &mask);
    write_manifest(
        common,
        "render",
        json!({ "space": space, "camera": cam, "mask_iou": mask_iou }),
        &[preview.clone(), raw, sil],
    )?;
    println!("{}", json!({ "preview": preview, "mask_iou": mask_iou }));
    Ok(())
}

fn export_mesh_cmd(source: &FieldSource, cfg: &ExtractionConfig, format: FormatArg, common: &Common) -> Result<()> {
    set_threads(common);
    let tr = source_trainer(source, common)?;
    std::fs::create_dir_all(&common.out)?;
    let mesh = extract_mesh(tr.params(), &tr.canonical, &tr.observation, cfg)?;
    let (ext, fmt) = match format {
        FormatArg::Obj => ("obj", MeshFormat::Obj),
        FormatArg::Ply => ("ply", MeshFormat::Ply),
    };
    let path = common.out.join(format!("mesh_{}.{ext}", cfg.space));
    write_mesh(&mesh, &path, fmt)?;
    if mesh.is_empty() {
        log::warn!("isosurface at {} is empty", cfg.iso_level);
    }
    write_manifest(
        common,
        "export-mesh",
        json!({
            "space": cfg.space,
            "iso_level": cfg.iso_level,
            "grid_resolution": cfg.grid_resolution,
            "vertices": mesh.vertices.len(),
            "faces": mesh.faces.len(),
        }),
        &[path.clone()],
    )?;
    println!("{}", path.display());
    Ok(())
}

/// Parses `x,y,z`.
fn parse_point(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected x,y,z, got {} values", v.len()))
}

/// The probe JSON for `point`.
pub fn probe(source: &FieldSource, point: &[f64; 3], space: SpaceKind, common: &Common) -> Result<Value> {
    let x = Vec3::from(*point);
    if x.iter().any(|c| !c.is_finite() || c.abs() > 1.0) {
        return Err(Error::InvalidArgument(format!("point {point:?} is outside the scene box [-1, 1]³")));
    }
    let tr = source_trainer(source, common)?;
    let sp = tr.space(space);
    let mut s = field::eval_in_space(tr.params(), sp, &x)?;
    let g = field::density_gradient(tr.params(), sp, &x, GradientMode::Analytic)?;
    s.density_gradient = Some([g.x, g.y, g.z]);
    Ok(json!({
        "point": point,
        "space": space,
        "sigma": s.sigma,
        "color": s.color,
        "normal": s.normal,
        "normal_unit": s.reported_normal(),
        "prior_sigma": s.prior_sigma,
        "density_gradient": s.density_gradient,
    }))
}
