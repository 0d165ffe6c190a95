//! Behaviour of the `mvpcbm` binary: exit codes, outputs and overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use tempfile::TempDir;

fn mvpcbm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvpcbm"))
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        mvpcbm(args, self.dir.path())
    }

    fn synth(&self, name: &str, settings: &[&str]) -> Output {
        let mut args = vec!["synth", "--out", name];
        for s in settings {
            args.extend(["--set", s]);
        }
        self.run(&args)
    }

    fn train(&self, bundle: &str, checkpoint: &str, extra: &[&str]) -> Output {
        let report = format!("{checkpoint}.report.jsonl");
        let mut args = vec![
            "train",
            "--bundle",
            bundle,
            "--checkpoint",
            checkpoint,
            "--report",
            &report,
        ];
        args.extend(extra);
        self.run(&args)
    }
}

/// Workspace with a small bundle `s.mvpb` and a two-epoch checkpoint `c.json`.
fn trained() -> Workspace {
    let ws = Workspace::new();
    assert_eq!(code(&ws.synth("s.mvpb", &["n_samples=60"])), 0);
    let out = ws.train("s.mvpb", "c.json", &["--set", "epochs=2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ws
}

#[test]
fn synth_is_reproducible() {
    let ws = Workspace::new();
    let a = ws.synth("a.mvpb", &["n_samples=40", "seed=7"]);
    let b = ws.synth("b.mvpb", &["n_samples=40", "seed=7"]);
    assert_eq!(code(&a), 0);
    assert_eq!(json(&a)["fingerprint"], json(&b)["fingerprint"]);
    assert_eq!(
        std::fs::read(ws.path("a.mvpb")).unwrap(),
        std::fs::read(ws.path("b.mvpb")).unwrap()
    );
    let c = ws.synth("c.mvpb", &["n_samples=40", "seed=8"]);
    assert_ne!(
        std::fs::read(ws.path("a.mvpb")).unwrap(),
        std::fs::read(ws.path("c.mvpb")).unwrap()
    );
    assert_eq!(json(&c)["violations"], serde_json::json!([]));
}

#[test]
fn more_attributes_than_layers_is_accepted() {
    let ws = Workspace::new();
    let out = ws.synth(
        "s.mvpb",
        &[
            "n_samples=20",
            "n_layers=2",
            "n_attributes=5",
            "n_patches=10",
            "n_concepts_per_attr=2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["planted_layers"].as_array().unwrap().len(), 5);
    assert_eq!(code(&ws.train("s.mvpb", "c.json", &["--set", "epochs=1"])), 0);
}

#[test]
fn usage_errors_exit_2() {
    let ws = Workspace::new();
    let few_patches = ws.synth("s.mvpb", &["n_patches=2", "n_attributes=3"]);
    assert_eq!(code(&few_patches), 2);
    assert!(String::from_utf8_lossy(&few_patches.stderr).contains("patch"));
    assert!(!ws.path("s.mvpb").exists());
    assert_eq!(code(&ws.synth("s.mvpb", &["no_such_key=1"])), 2);
    assert_eq!(code(&ws.run(&["frobnicate"])), 2);
    assert_eq!(
        code(&ws.run(&[
            "train",
            "--bundle",
            "missing.mvpb",
            "--checkpoint",
            "c",
            "--report",
            "r"
        ])),
        2
    );
}

#[test]
fn config_file_and_overrides() {
    let ws = Workspace::new();
    std::fs::write(ws.path("cfg.json"), r#"{"n_samples": 30, "epochs": 1, "lambda2": 0.5}"#).unwrap();
    assert_eq!(code(&ws.run(&["synth", "--out", "s.mvpb", "--config", "cfg.json"])), 0);
    let out = ws.run(&[
        "train",
        "--bundle",
        "s.mvpb",
        "--checkpoint",
        "c.json",
        "--report",
        "r.jsonl",
        "--config",
        "cfg.json",
        "--set",
        "lambda2=0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let checkpoint: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("c.json")).unwrap()).unwrap();
    assert_eq!(checkpoint["config"]["lambda2"], 0.0);
    assert_eq!(checkpoint["config"]["epochs"], 1);
    assert_eq!(json(&out)["epochs"], 1);
}

#[test]
fn baseline_mode_is_marked_in_the_report() {
    let ws = Workspace::new();
    ws.synth("s.mvpb", &["n_samples=30"]);
    let out = ws.train(
        "s.mvpb",
        "c.json",
        &["--mode", "baseline-last-layer", "--set", "epochs=2"],
    );
    assert_eq!(code(&out), 0);
    let report = std::fs::read_to_string(ws.path("c.json.report.jsonl")).unwrap();
    let lines: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for line in &lines {
        assert_eq!(line["mode"], "baseline_last_layer");
        assert_eq!(line["hard_sparsity"], 1.0);
    }
    let eval = ws.run(&["eval", "--bundle", "s.mvpb", "--checkpoint", "c.json"]);
    assert_eq!(code(&eval), 0);
    assert_eq!(json(&eval)["n_samples"], 30);
}

#[test]
fn divergent_training_exits_3() {
    let ws = Workspace::new();
    ws.synth("s.mvpb", &["n_samples=30"]);
    let out = ws.train(
        "s.mvpb",
        "c.json",
        &["--set", "learning_rate=1e308", "--set", "epochs=3"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
}

#[test]
fn eval_reports_metrics_and_rejects_other_bundles() {
    let ws = trained();
    let out = ws.run(&["eval", "--bundle", "s.mvpb", "--checkpoint", "c.json"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let acc = v["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["confusion"].as_array().unwrap().len(), 3);

    ws.synth("other.mvpb", &["n_samples=20", "n_attributes=2"]);
    assert_eq!(
        code(&ws.run(&["eval", "--bundle", "other.mvpb", "--checkpoint", "c.json"])),
        2
    );
}

#[test]
fn explain_respects_topk_and_sample_range() {
    let ws = trained();
    let base = [
        "explain",
        "--bundle",
        "s.mvpb",
        "--checkpoint",
        "c.json",
        "--sample",
        "3",
    ];
    let count = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend(extra);
        let out = ws.run(&args);
        assert_eq!(code(&out), 0);
        json(&out)["concepts"].as_array().unwrap().len()
    };
    assert_eq!(count(&[]), 5);
    assert_eq!(count(&["--topk", "9"]), 9);
    assert_eq!(count(&["--topk", "50"]), 9);
    let out = ws.run(&[
        "explain",
        "--bundle",
        "s.mvpb",
        "--checkpoint",
        "c.json",
        "--sample",
        "60",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn export_viz_writes_tables() {
    let ws = trained();
    let out = ws.run(&[
        "export-viz",
        "--bundle",
        "s.mvpb",
        "--checkpoint",
        "c.json",
        "--out-dir",
        "viz",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "preference_profile.csv",
        "activation_dense.csv",
        "activation_sparse.csv",
        "explanations.jsonl",
    ] {
        assert!(ws.path("viz").join(name).is_file(), "{name} missing");
    }
    let profile = std::fs::read_to_string(ws.path("viz/preference_profile.csv")).unwrap();
    // header + L * m rows
    assert_eq!(profile.lines().count(), 1 + 6 * 3);
}

#[test]
fn gradcheck_reports_every_parameter() {
    let ws = Workspace::new();
    let out = ws.run(&["gradcheck", "--out", "g.json"]);
    assert_eq!(code(&out), 0);
    let report = json(&out);
    let names: Vec<&str> = report["params"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["log_tau1", "tau2", "K", "W", "b"]);
    assert!(report["max_error"].as_f64().unwrap() <= 1e-4);
    assert!(ws.path("g.json").is_file());

    let broken = ws.run(&["gradcheck", "--perturb-analytic"]);
    assert_eq!(code(&broken), 1);
    assert_eq!(json(&broken)["passed"], false);
}
