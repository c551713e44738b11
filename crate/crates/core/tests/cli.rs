mod common;

use std::fs;
use std::process::{Command, Output};

fn vbll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbll"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn data_dir() -> String {
    common::data_dir().display().to_string()
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = vbll(&[
        "run",
        "--dataset",
        "heart_cleveland",
        "--data-dir",
        &data_dir(),
        "--configs",
        "C1,C4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("heart_cleveland (N = 297"));
    let csv = fs::read_to_string(out.join("heart_cleveland/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("reliability_grid.svg").exists());
}

#[test]
fn metrics_scores_a_probability_file() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("p.csv");
    let labels = dir.path().join("y.csv");
    fs::write(&probs, "row_id,p_pos\n3,0.8\n7,0.4\n").unwrap();
    fs::write(&labels, "row_id,label\n7,0\n3,1\n").unwrap();
    let o = vbll(&[
        "metrics",
        "--probs",
        probs.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    let row = stdout.lines().nth(1).unwrap();
    assert!(row.starts_with("scored,1.000000,1.000000,1.000000,1.000000,1.000000,0.366985,"));
}

#[test]
fn export_clean_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clean.csv");
    let o = vbll(&[
        "export-clean",
        "--dataset",
        "heart_cleveland",
        "--data-dir",
        &data_dir(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 298);
    assert!(text.starts_with("row_id,label,f0,"));
}

#[test]
fn failures_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "run",
            "--dataset",
            "pima",
            "--data-dir",
            "/nonexistent",
            "--out",
            out,
        ],
        vec![
            "run",
            "--dataset",
            "breast_cancer",
            "--data-dir",
            "/nonexistent",
            "--configs",
            "C9",
            "--out",
            out,
        ],
        vec!["run", "--out", out],
        vec![
            "metrics",
            "--probs",
            "/nonexistent.csv",
            "--labels",
            "/nonexistent.csv",
        ],
        vec!["bogus"],
    ];
    for args in cases {
        let o = vbll(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} gave no message");
    }
    let missing = vbll(&[
        "run",
        "--dataset",
        "pima",
        "--data-dir",
        "/nonexistent",
        "--out",
        out,
    ]);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/pima.csv"));
}

#[test]
fn missing_probability_row_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("p.csv");
    let labels = dir.path().join("y.csv");
    fs::write(&probs, "row_id,p_pos\n3,0.8\n9,0.4\n").unwrap();
    fs::write(&labels, "row_id,label\n3,1\n").unwrap();
    let o = vbll(&[
        "metrics",
        "--probs",
        probs.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing row_id 9"));
}
