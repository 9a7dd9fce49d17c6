use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "grid": {"dim": 1, "n_points": 64, "box_length": 4.0},
  "nonlinearity": {"preset": "x5"},
  "eps_grid": [0.5, 0.25],
  "ensemble_size": 2,
  "master_seed": 17,
  "final_time": 0.125
}"#;

fn phi4lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phi4lab")).args(args).output().unwrap()
}

fn with_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_in(dir: &Path, cfg: &str, cmd: &str, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec![cmd, "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend(extra);
    phi4lab(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (head, rows)
}

fn run_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_exits_two_with_usage() {
    let o = phi4lab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn renorm_lambda3_is_ten_sigma_squared_for_x5() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_config(d.path(), SMALL);
    let o = run_in(d.path(), &cfg, "renorm", "out", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (head, rows) = read_csv(&d.path().join("out/renorm.csv"));
    let col = |n: &str| head.iter().position(|h| h == n).unwrap();
    assert_eq!(rows.len(), 2);
    let hash = run_json(&d.path().join("out"))["config_hash"].as_str().unwrap().to_string();
    for r in &rows {
        let s2: f64 = r[col("sigma_sq")].parse().unwrap();
        let l3: f64 = r[col("lambda3")].parse().unwrap();
        assert!((l3 - 10.0 * s2).abs() <= 1e-12 * l3, "{l3} vs {s2}");
        assert_eq!(r[col("config_hash")], hash);
        assert_eq!(r[col("version")], env!("CARGO_PKG_VERSION"));
    }
    assert!(!d.path().join("out/INCOMPLETE").exists());
}

#[test]
fn outputs_are_byte_identical_per_seed_and_worker_count() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_config(d.path(), SMALL);
    for (out, w) in [("a", "1"), ("b", "2")] {
        let o = run_in(d.path(), &cfg, "simulate", out, &["--workers", w]);
        assert!(o.status.success());
    }
    let a = fs::read(d.path().join("a/simulate.csv")).unwrap();
    let b = fs::read(d.path().join("b/simulate.csv")).unwrap();
    assert_eq!(a, b);
    let o = run_in(d.path(), &cfg, "simulate", "c", &["--seed", "18"]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&d.path().join("c/simulate.csv"));
    let (_, base) = read_csv(&d.path().join("a/simulate.csv"));
    assert_ne!(rows, base);
    assert_ne!(rows[0].last(), None);
}

#[test]
fn decompose_and_maxprinciple_report_passing_checks() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_config(d.path(), SMALL);
    for cmd in ["decompose", "maxprinciple"] {
        let o = run_in(d.path(), &cfg, cmd, cmd, &[]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(run_json(&d.path().join(cmd))["status"], "complete");
    }
    let (head, rows) = read_csv(&d.path().join("maxprinciple/maxprinciple.csv"));
    let holds = head.iter().position(|h| h == "holds").unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[holds] == "true"));
    let (_, terms) = read_csv(&d.path().join("decompose/terms.csv"));
    assert!(!terms.is_empty());
}

#[test]
fn converge_and_trees_write_reports() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_config(d.path(), SMALL);
    for (cmd, files) in [
        ("converge", &["converge.csv", "converge_medians.csv", "converge.json"][..]),
        ("trees", &["trees.csv", "decay.csv", "trees.json"][..]),
    ] {
        let o = run_in(d.path(), &cfg, cmd, cmd, &[]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        for f in files {
            assert!(d.path().join(cmd).join(f).exists(), "{cmd}/{f}");
        }
    }
    let (_, rows) = read_csv(&d.path().join("trees/trees.csv"));
    assert_eq!(rows.len(), 2 * 10);
}

#[test]
fn selftest_passes_on_default_config() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("st");
    let o = phi4lab(&["selftest", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let (head, rows) = read_csv(&out.join("selftest.csv"));
    let passed = head.iter().position(|h| h == "passed").unwrap();
    assert!(rows.len() >= 10 && rows.iter().all(|r| r[passed] == "true"));
}

#[test]
fn invalid_config_is_rejected_with_a_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = with_config(d.path(), r#"{"eps_grid": [2.0]}"#);
    let o = run_in(d.path(), &cfg, "renorm", "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));
    assert!(!d.path().join("out").exists());
}

#[test]
fn failed_runs_are_flagged_incomplete() {
    let d = tempfile::tempdir().unwrap();
    // ε = 1/8 is not resolved by 8 points on [0, 2π)
    let cfg = with_config(d.path(), r#"{"grid": {"dim": 1, "n_points": 8, "box_length": 6.283185307179586}}"#);
    let o = run_in(d.path(), &cfg, "renorm", "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    let out = d.path().join("out");
    assert!(out.join("INCOMPLETE").exists());
    assert_eq!(run_json(&out)["status"], "incomplete");
}
