use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(cmd: &str, config: &str, out: &Path) -> Output {
    let cfg = out.join("config.json");
    fs::create_dir_all(out).unwrap();
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_photon"))
        .args([cmd, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out.join("run"))
        .env("PHOTON_THREADS", "1")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_FIELDS: &str = r#"{"fields": {"grid_n": 25, "plane": {"n": [21, 21]}, "times": [0, 4]}}"#;

#[test]
fn fields_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run("fields", SMALL_FIELDS, a.path()).status.success());
    assert!(run("fields", SMALL_FIELDS, b.path()).status.success());
    for name in ["fields.json", "fields_t0.csv", "fields_t1.csv"] {
        let x = fs::read(a.path().join("run").join(name)).unwrap();
        let y = fs::read(b.path().join("run").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn zero_state_fields_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"fields": {"zero_state": true, "grid_n": 9, "plane": {"n": [5, 5]}, "times": [0]}}"#;
    let out = run("fields", cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/fields_t0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x,y,z,Ex,Ey,Ez,Hx,Hy,Hz,Ax,Ay,Az,F2");
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 25);
    for row in rows {
        for v in row.split(',').skip(3) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn singular_cone_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("verify", r#"{"grid": {"eps_cone": 0.0}}"#, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular cone"));
    assert!(!dir.path().join("run/verify.json").exists());
}

#[test]
fn unknown_config_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("gauge-demo", r#"{"gague": [1, 0, 0]}"#, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_scan_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("shift-scan", r#"{"scan": {"thetas": []}}"#, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_gauges_leave_everything_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"gauge_prime": [0, 0, 2], "trials": 2,
                  "grid": {"n": 17}, "covariance": {"n": 17, "half_width": 0.5}}"#;
    let out = run("gauge-demo", cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("run/gauge_demo.json"));
    assert_eq!(report["passed"], Value::Bool(true));
    for c in report["checks"].as_array().unwrap() {
        assert!(c["residual"].as_f64().unwrap() <= 1e-12, "{c}");
    }
}

#[test]
fn shift_scan_writes_one_block_per_helicity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"scan": {"thetas": [0.5236, 0.7854], "n": 9}}"#;
    let out = run("shift-scan", cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/shift_scan.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![1.0, 1.0, -1.0, -1.0]);
    for (p, m) in rows[..2].iter().zip(&rows[2..]) {
        assert!((p[5] + m[5]).abs() < 1e-12);
        assert!(p[7] < 0.02);
    }
    let report = json(&dir.path().join("run/shift_scan.json"));
    assert_eq!(report["passed"], Value::Bool(true));
}
