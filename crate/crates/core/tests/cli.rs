use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn dip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dip"))
        .args(args)
        .env("DIP_THREADS", "1")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn small_input(dir: &Path) -> String {
    let img = dip_core::imaging::load_tensor(data("astronaut_64.png")).unwrap();
    let small = dip_core::imaging::center_crop(&img, 32, 32).unwrap();
    let path = dir.join("small.png");
    dip_core::imaging::save_tensor(&path, &small).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&dip(&[])), 2);
    assert_eq!(code(&dip(&["denoise", "--bogus"])), 2);
    assert_eq!(code(&dip(&["denoise"])), 2);
    assert_eq!(code(&dip(&["--help"])), 0);
}

#[test]
fn bad_settings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path());
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(code(&dip(&["inpaint", "--input", &input, "--mask", "oval:3", "--out", o])), 2);
    assert_eq!(code(&dip(&["denoise", "--input", &input, "--lr", "-1", "--out", o])), 2);
    assert_eq!(code(&dip(&["denoise", "--input", &input, "--arch", "vgg16", "--out", o])), 2);
    assert_eq!(code(&dip(&["denoise", "--input", &input, "--config", "/nonexistent.json"])), 2);
    assert!(!out.exists());
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = dip(&["denoise", "--input", "/nonexistent.png", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 3);
}

#[test]
fn bench_without_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = dip(&["bench", "--dataset", dir.path().to_str().unwrap(), "--task", "denoise", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
    std::fs::write(dir.path().join("manifest.json"), r#"{"images": []}"#).unwrap();
    let r = dip(&["bench", "--dataset", dir.path().to_str().unwrap(), "--task", "denoise", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 2);
}

#[test]
fn dry_run_prints_config_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path());
    let out = dir.path().join("o");
    let r = dip(&["sr", "--input", &input, "--synth", "--dry-run", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let text = String::from_utf8(r.stdout).unwrap();
    let (json, hash) = text.rsplit_once("config hash: ").unwrap();
    let cfg = dip_core::cli::RunConfig::from_json(json).unwrap();
    assert_eq!(cfg.optim.iterations, 2000);
    assert_eq!(cfg.hash(), hash.trim());
    assert!(!out.exists());
}

#[test]
fn single_iteration_writes_one_trace_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path());
    let out = dir.path().join("o");
    let r = dip(&["denoise", "--input", &input, "--sigma-synth", "25", "--iters", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,energy,psnr_vs_gt");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
    for f in ["final.png", "ema.png", "noisy.png", "result.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let result: Value = serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["iterations"], 1);
    assert_eq!(result["reference"]["name"], "noisy");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path());
    let mut cfg = dip_core::cli::RunConfig::for_task(dip_core::cli::TaskConfig::Restore {
        input: input.clone().into(),
        gt: None,
    });
    cfg.optim.iterations = 4;
    cfg.optim.trace_every = 2;
    cfg.seeds = vec![7, 8];
    cfg.optim.seed = 7;
    cfg.out = dir.path().join("from_config");
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();

    let r = dip(&["restore", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let result: Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["iterations"], 4);
    assert_eq!(result["seeds"], serde_json::json!([7, 8]));
    assert_eq!(result["config_hash"], cfg.hash());
    assert!(cfg.out.join("seed_7/trace.csv").exists());

    let out = dir.path().join("override");
    let r = dip(&["restore", "--config", path.to_str().unwrap(), "--iters", "2", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let result: Value = serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["iterations"], 2);
    assert_eq!(result["seeds"][0], 3);
}

#[test]
fn divergence_exits_3_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path());
    let mut cfg = dip_core::cli::RunConfig::for_task(dip_core::cli::TaskConfig::Restore {
        input: input.into(),
        gt: None,
    });
    cfg.architecture = dip_core::network::ArchitectureSpec {
        normalization: dip_core::network::Normalization::None,
        output_activation: dip_core::network::OutputActivation::Identity,
        ..dip_core::network::ArchitectureSpec::encoder_decoder(3)
    };
    cfg.optim.optimizer = dip_core::optimize::OptimizerKind::Sgd { lr: 1.0 };
    cfg.optim.iterations = 50;
    cfg.optim.trace_every = 1;
    cfg.out = dir.path().join("o");
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let r = dip(&["restore", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("diverged"));
    let trace = std::fs::read_to_string(cfg.out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
    assert!(!cfg.out.join("result.json").exists());
}

#[test]
fn inpaint_writes_reusable_mask() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path());
    let out = dir.path().join("o");
    let r = dip(&["inpaint", "--input", &input, "--mask", "rect:4,4,8,8", "--iters", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let mask = dip_core::imaging::load(out.join("mask.png")).unwrap();
    assert_eq!(mask.channels(), 1);
    assert_eq!(mask.samples()[0], 255);
    assert_eq!(mask.samples()[5 * 32 + 5], 0);

    let again = dir.path().join("again");
    let spec = format!("file:{}", out.join("mask.png").display());
    let r = dip(&["inpaint", "--input", &input, "--mask", &spec, "--gt", &input, "--iters", "2", "--out", again.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read(out.join("masked.png")).unwrap(), std::fs::read(again.join("masked.png")).unwrap());
}
