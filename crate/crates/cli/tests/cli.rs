use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dnn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn verify_five_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnn(&["verify", "--n", "5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("report.json"));
    let edges = report["realization"]["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 10);
    assert!(edges.iter().all(|e| e["verdict"] == "verified"));
    assert_eq!(report["jacobian_probe"]["seed"], 0);
    assert!(dir.path().join("equilibria.csv").exists());
}

#[test]
fn miscalibrated_epsilon_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnn(&["verify", "--n", "6", "--epsilon", "1.0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cause:"), "{stderr}");
}

#[test]
fn invalid_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnn(&["build", "--n", "3", "--mode", "general"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"));
    let out = dnn(&["build", "--n", "41"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = dnn(&["verify", "--n", "4", "--rel-tol", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epsilon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnn(&["verify", "--n", "3", "--epsilon", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon must be positive"));
}

#[test]
fn build_writes_spec_and_equations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnn(&["build", "--n", "6", "--epsilon", "auto"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let spec = json(&dir.path().join("spec.json"));
    assert_eq!(spec["dim"], 6);
    assert_eq!(spec["epsilon"].as_f64(), Some(0.01));
    assert!(!fs::read_to_string(dir.path().join("equations.txt")).unwrap().is_empty());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# sweep\nn = 4\nseed = 5\nkappa = 0.001\n").unwrap();
    let out = dnn(&["stability", "--config", cfg.to_str().unwrap(), "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("stability.json"));
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["config"]["n"], 4);
    assert_eq!(report["config"]["kappa"].as_f64(), Some(0.001));
    let cycles = report["cycles"].as_array().unwrap();
    assert_eq!(cycles.len(), 2);
    assert!(cycles.iter().all(|c| c["classification"]["verdict"] == "completely-unstable"));

    fs::write(&cfg, "n = 4\ncolour = red\n").unwrap();
    let out = dnn(&["build", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_one_plane() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnn(&["plot", "--n", "3", "--plane", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let svg = fs::read_to_string(dir.path().join("plane_2.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(dir.path().join("plane_2_nullclines.csv").exists());
}

#[test]
fn repeated_full_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = dnn(&["all", "--n", "3", "--seed", "11"], d.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let report = fs::read(a.path().join("report.json")).unwrap();
    assert_eq!(report, fs::read(b.path().join("report.json")).unwrap());
    assert!(json(&a.path().join("report.json"))["cycles"].is_array());
}
