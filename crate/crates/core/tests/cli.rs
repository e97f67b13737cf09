use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn srcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srcf"))
        .args(args)
        .output()
        .expect("spawn srcf")
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(s.lines().count(), 1, "diagnostic should be one line: {s:?}");
    s.trim_end().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    rd.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn score_succeeds_and_methods_agree() {
    let out = srcf(&["score", "--n-steps", "30", "--theta", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let ll: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((ll[0] - ll[1]).abs() <= 1e-9 * ll[0].abs());
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let out = srcf(&["score", "--n-steps", "10", "--method", "sqrt"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let cell = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .to_string();
    let mantissa = cell.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(
        mantissa.chars().filter(char::is_ascii_digit).count(),
        17,
        "{cell}"
    );
}

#[test]
fn config_errors_exit_two() {
    let out = srcf(&["score", "--delta", "-1", "--model", "example3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("config: "));

    let out = srcf(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("config: "));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let out = srcf(&["score", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("config: "));
}

#[test]
fn singular_innovation_exits_three() {
    let out = srcf(&[
        "score",
        "--model",
        "example3",
        "--delta",
        "1e-10",
        "--method",
        "conventional",
        "--n-steps",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("numerical: "));
}

#[test]
fn frozen_model_has_zero_gradient() {
    let out = srcf(&["score", "--freeze", "--n-steps", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(1) {
        let g: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(g, 0.0);
    }
}

#[test]
fn table1_writes_six_rows_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = srcf(&[
        "experiment",
        "table1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&dir.path().join("table1.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[5][2], "NaN");

    let echoed = dir.path().join("effective_config.json");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&echoed).unwrap()).unwrap();
    assert_eq!(v["delta_list"].as_array().unwrap().len(), 6);

    // the echoed config reproduces the run byte for byte
    let again = tempfile::tempdir().unwrap();
    let out = srcf(&[
        "experiment",
        "table1",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        again.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("table1.csv")).unwrap(),
        fs::read(again.path().join("table1.csv")).unwrap()
    );
}

#[test]
fn sweep_is_deterministic_and_honours_grid() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = srcf(&[
            "experiment",
            "example1-sweep",
            "--tau-grid",
            "3,6",
            "--seed",
            "11",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        let rows = csv_rows(&dir.path().join("example1_sweep.csv"));
        assert_eq!(rows.len(), 2);
        assert!(dir.path().join("loglf_square_root.dat").exists());
        fs::read(dir.path().join("example1_sweep.csv")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn single_algorithm_profile_is_identically_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = srcf(&[
        "experiment",
        "perf-profile",
        "--method",
        "sqrt",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let pts = fs::read_to_string(dir.path().join("profile_square_root.dat")).unwrap();
    for line in pts.lines() {
        let phi: f64 = line.split(' ').nth(1).unwrap().parse().unwrap();
        assert_eq!(phi, 1.0);
    }
}

#[test]
fn markdown_format() {
    let out = srcf(&[
        "experiment",
        "table1",
        "--format",
        "md",
        "--delta-list",
        "1e-2,1e-4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("| delta | cond_Re1 |"));
    assert_eq!(text.lines().filter(|l| l.starts_with("| ")).count(), 3);
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = srcf(&[
        "simulate",
        "--n-steps",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(csv_rows(&dir.path().join("trajectory.csv")).len(), 7);
    assert!(dir.path().join("effective_config.json").exists());
}
