use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
run_id = "tiny"
out_dir = "runs"

[dataset]
kind = "synth"
class_count = 3
per_class = 20
test_per_class = 10
image_side = 4
seed = 1
test_seed = 2

[noise]
model = "symmetric"
epsilon = 0.4
seed = 3

[model]
kind = "mlp"
hidden_dims = [8]

[train]
algorithm = "co_matching"
tau = 0.4
t_k = 2
epochs = 2
batch_size = 16
lr_decay_start = 1

[views.weak]
kind = "weak"
pad = 1

[views.strong]
kind = "strong"
pad = 1
transform_set = ["Rotate", "Solarize", "Cutout"]
"#;

fn lab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comatch-lab"))
        .args(args)
        .current_dir(root)
        .env("COMATCH_OUT_ROOT", root.join("out"))
        .output()
        .unwrap()
}

fn write_config(root: &Path, text: &str) -> String {
    let path = root.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn run_writes_under_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = lab(tmp.path(), &["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["epochs"], 2);
    let dir = tmp.path().join("out/runs/tiny");
    for f in ["config.snapshot", "metrics.csv", "curves.svg", "summary.toml", "checkpoints/network_1.ckpt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let first = fs::read(dir.join("metrics.csv")).unwrap();
    let again = lab(tmp.path(), &["run", "--config", dir.join("config.snapshot").to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(fs::read(dir.join("metrics.csv")).unwrap(), first);
}

#[test]
fn sweep_runs_every_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = lab(tmp.path(), &["sweep", "--config", &cfg, "--param", "lambda", "--values", "0.2,0.8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out/runs/tiny-sweep-lambda");
    assert!(dir.join("tiny-lambda0.2/metrics.csv").exists());
    assert!(dir.join("tiny-lambda0.8/metrics.csv").exists());
    assert_eq!(fs::read_to_string(dir.join("sweep.csv")).unwrap().lines().count(), 3);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
}

#[test]
fn sweep_with_a_bad_value_reports_it_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = lab(tmp.path(), &["sweep", "--config", &cfg, "--param", "lambda", "--values", "0.5,3"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "validation");
    assert!(tmp.path().join("out/runs/tiny-sweep-lambda/tiny-lambda0.5/metrics.csv").exists());
}

#[test]
fn unknown_sweep_parameter_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = lab(tmp.path(), &["sweep", "--config", &cfg, "--param", "gamma", "--values", "1"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "validation");
}

#[test]
fn audit_noise_prints_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = lab(tmp.path(), &["audit-noise", "--config", &cfg]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["q"][0][0], 0.6);
    assert_eq!(v["empirical_q"].as_array().unwrap().len(), 3);
    let rate = v["realized_flip_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn grad_check_mlp_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), &["grad-check", "--model", "mlp"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn errors_are_machine_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), &["run", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_json(&out)["error"], "io");

    let cfg = write_config(tmp.path(), &TINY.replace("tau = 0.4", "tau = 0.4\nlambda = 2.0"));
    let out = lab(tmp.path(), &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "validation");
    assert!(!tmp.path().join("out/runs/tiny").exists());

    let cfg = write_config(tmp.path(), &TINY.replace("[dataset]", "colour = 1\n[dataset]"));
    let out = lab(tmp.path(), &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(stderr_json(&out)["error"], "format");

    let out = lab(tmp.path(), &["grad-check", "--model", "resnet"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn init_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(tmp.path(), &["init-config", "--algorithm", "standard-plus", "--run-id", "x"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("algorithm = \"standard_plus\""));
    let cfg = comatch::lab::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.run_id, "x");
}
