use std::path::Path;
use std::process::{Command, Output};

use avatarforge_core::bodymodel::{capsule, BodyModelAsset, PoseShapeParams};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avatarforge"))
        .args(args)
        .env_remove("AVATARFORGE_BRIDGE_URL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_json(path: &Path, v: &Value) -> String {
    std::fs::write(path, serde_json::to_vec(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn toy_config(dir: &Path) -> String {
    write_json(
        &dir.join("toy.json"),
        &serde_json::json!({
            "iterations": 2,
            "render_resolution": 16,
            "samples_per_ray": 8,
            "checkpoint_every": 1,
            "preview_every": 1
        }),
    )
}

#[test]
fn help_lists_flags_and_unknown_flags_fail() {
    let o = bin(&["probe", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in ["--point", "--space", "--checkpoint", "--config", "--pose", "--seed", "--set", "--threads", "--out"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    assert!(bin(&["--help"]).status.success());
    assert_eq!(bin(&["probe", "--point", "0,0,0", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn gen_asset_writes_a_valid_asset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/capsule.avbm");
    let o = bin(&["gen-asset", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let asset = BodyModelAsset::load(&path).unwrap();
    asset.validate().unwrap();
    assert_eq!(&asset, capsule::capsule_person());
}

#[test]
fn probe_reports_the_prior_at_zero_init() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let body = capsule::capsule_person().canonical_a_pose();
    // spine joint sits deep inside the torso
    let j = body.joints[3];
    let point = format!("{},{},{}", j.x, j.y, j.z);
    let run = || bin(&["probe", "--point", &point, "--out", out, "--seed", "4"]);
    let (a, b) = (run(), run());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let (s, p) = (v["sigma"].as_f64().unwrap(), v["prior_sigma"].as_f64().unwrap());
    assert!(p > 900.0);
    assert!((s - p).abs() < 1e-3);

    let o = bin(&["probe", "--point", "-0.95,0.95,-0.95", "--out", out]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["prior_sigma"].as_f64().unwrap(), 0.0);

    assert_eq!(bin(&["probe", "--point", "0,1.5,0", "--out", out]).status.code(), Some(2));
    assert_eq!(bin(&["probe", "--point", "0,1", "--out", out]).status.code(), Some(2));
}

#[test]
fn render_silhouette_matches_the_posed_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let asset = capsule::capsule_person();
    let pose = PoseShapeParams::a_pose(asset, &vec![0.0; asset.n_shape]);
    let pose_path = write_json(&dir.path().join("apose.json"), &serde_json::to_value(&pose).unwrap());
    let out = dir.path().join("r");
    let o = bin(&["render", "--pose", &pose_path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["mask_iou"].as_f64().unwrap() >= 0.95);
    for f in ["render_observation.png", "render_observation.avim", "silhouette_observation.png", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn export_mesh_is_non_empty_at_zero_init() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["export-mesh", "--iso", "25", "--resolution", "48", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("mesh_canonical.obj")).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("v ")).count() > 100);
    assert!(text.lines().any(|l| l.starts_with("f ")));
}

#[test]
fn generate_smoke_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let outs = ["a", "b"].map(|n| dir.path().join(n));
    for out in &outs {
        let o = bin(&["generate", "--config", &cfg, "--denoiser", "mock", "--seed", "9", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let previews = std::fs::read_dir(&outs[0])
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("preview_"))
        .count();
    assert!(previews >= 2);
    for f in ["final.avck", "checkpoint_000001.avck", "losses.csv"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(outs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["steps"], 2);

    let once = dir.path().join("c");
    let o = bin(&["generate", "--config", &cfg, "--set", "iterations=1", "--out", once.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(once.join("losses.csv")).unwrap().lines().count(), 2);
}

#[test]
fn generate_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = bin(&["generate", "--config", "/nonexistent/toy.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config not found"));

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = write_json(
        &dir.path().join("remote.json"),
        &serde_json::json!({
            "iterations": 1,
            "render_resolution": 8,
            "samples_per_ray": 4,
            "denoiser": { "kind": "remote", "url": format!("http://127.0.0.1:{port}"), "attempts": 2, "backoff_ms": 1 }
        }),
    );
    let o = bin(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("attempts"));
}
