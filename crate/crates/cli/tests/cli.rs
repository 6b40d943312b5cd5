use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgcn")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn tree_synthesis_and_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let out = kgcn(&["synth", "--kind", "tree", "--depth", "5", "--branching", "4", "--out", path(&g)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let edges = fs::read_to_string(g.join("edges.tsv")).unwrap();
    assert_eq!(edges.lines().count(), 1364);

    let edges = g.join("edges.tsv");
    let out = kgcn(&["curvature", "--edges", path(&edges), "--iters", "1000", "--seed", "7"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["kappa_hat"].as_f64().unwrap() < 0.0, "{v}");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = kgcn(&["distortion", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config"), "{err}");
    assert!(err.starts_with("error[config]"), "{err}");
}

#[test]
fn bad_data_and_usage_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.tsv");
    fs::write(&edges, "0\tx\n").unwrap();
    let out = kgcn(&["distortion", "--edges", path(&edges), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[data]"));
    assert_eq!(kgcn(&["distortion", "--epochs", "3"]).status.code(), Some(1));
    assert_eq!(kgcn(&["nonsense"]).status.code(), Some(1));
    assert_eq!(kgcn(&["--help"]).status.code(), Some(0));
}

#[test]
fn selftest_passes_and_catches_an_injected_fault() {
    let out = kgcn(&["selftest"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    for suite in ["oracle", "gyro", "taylor", "gradients", "limit"] {
        let line = stdout.lines().find(|l| l.starts_with(suite)).expect("suite line");
        assert!(line.contains(" 0 failed") && line.ends_with(" s"), "{line}");
    }
    let out = kgcn(&["selftest", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL left cancellation"));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[selftest]"));
}

#[test]
fn distortion_writes_metrics_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    assert!(kgcn(&["synth", "--kind", "cycle", "--n", "12", "--out", path(&g)]).status.success());
    let run = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"hidden": [6, 4], "lr_euclidean": 0.02}"#).unwrap();
    let out = kgcn(&[
        "distortion",
        "--edges",
        path(&g.join("edges.tsv")),
        "--config",
        path(&cfg),
        "--set",
        "epochs=7",
        "--family",
        "spherical",
        "--seed",
        "3",
        "--out",
        path(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(run.join("metrics.json")).unwrap();
    let at: Vec<usize> = ["config", "metrics", "kappas", "seed", "runtime_s"]
        .iter()
        .map(|k| text.find(&format!("\n  \"{k}\":")).unwrap_or_else(|| panic!("no top-level {k}")))
        .collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{at:?}");
    let m = json(&run.join("metrics.json"));
    assert_eq!(m["config"]["hidden"], serde_json::json!([6, 4]));
    assert_eq!(m["config"]["epochs"], 7);
    assert_eq!(m["config"]["lr_euclidean"], 0.02);
    assert_eq!(m["seed"], 3);
    assert!(m["kappas"][0].as_f64().unwrap() > 0.0);
    assert!(m["metrics"]["best_distortion"].as_f64().unwrap() > 0.0);
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 8);
    let names: Vec<_> = fs::read_dir(&run).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn nodeclass_on_a_block_model() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let out = kgcn(&["synth", "--kind", "sbm", "--sizes", "30,30", "--p-in", "0.3", "--p-out", "0.02", "--out", path(&g)]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(g.join("labels.csv")).unwrap().lines().count(), 60);
    let run = dir.path().join("run");
    let (edges, features, labels) = (g.join("edges.tsv"), g.join("features.csv"), g.join("labels.csv"));
    let args = [
        "nodeclass",
        "--edges",
        path(&edges),
        "--features",
        path(&features),
        "--labels",
        path(&labels),
        "--n-known",
        "40",
        "--per-label",
        "5",
        "--early-stop",
        "10",
        "--family",
        "euclidean",
        "--epochs",
        "30",
        "--out",
        path(&run),
    ];
    let out = kgcn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let split = json(&run.join("split.json"));
    assert_eq!(split["train"].as_array().unwrap().len(), 10);
    assert_eq!(split["test"].as_array().unwrap().len(), 20);
    let m = json(&run.join("metrics.json"));
    let acc = m["metrics"]["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let mut infeasible = args.to_vec();
    infeasible[10] = "50";
    assert_eq!(kgcn(&infeasible).status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    assert!(kgcn(&["synth", "--kind", "star", "--n", "6", "--out", path(&g)]).status.success());
    let run = dir.path().join("sweep");
    let out = kgcn(&[
        "sweep",
        "--edges",
        path(&g.join("edges.tsv")),
        "--kappa-min",
        "-1",
        "--kappa-max",
        "1",
        "--steps",
        "3",
        "--epochs",
        "5",
        "--out",
        path(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kappa,min_distortion");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("-1,") && lines[2].starts_with("0,") && lines[3].starts_with("1,"));
    assert_eq!(json(&run.join("metrics.json"))["kappas"], serde_json::json!([-1.0, 0.0, 1.0]));
}

#[test]
fn geometric_graph_from_mean_degree() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let out = kgcn(&["synth", "--kind", "sphere", "--n", "200", "--mean-degree", "12", "--seed", "1", "--out", path(&g)]);
    assert!(out.status.success());
    let edges = fs::read_to_string(g.join("edges.tsv")).unwrap().lines().count() as f64;
    let mean = 2.0 * edges / 200.0;
    assert!((mean - 12.0).abs() < 3.0, "mean degree {mean}");
    assert_eq!(kgcn(&["synth", "--kind", "torus", "--out", path(&g)]).status.code(), Some(1));
}
