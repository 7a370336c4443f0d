use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pdmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdmp"))
        .args(args)
        .env_remove("PDMP_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_passes_on_both_benchmarks() {
    for id in ["A", "B"] {
        let o = pdmp(&["check", "--benchmark", id]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["pass"], true);
    }
}

#[test]
fn broken_witness_fails_with_violator_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "broken.toml", "[model]\nid = \"A\"\n[witness]\nm_scale = 0.5\n");
    let out = dir.path().join("report");
    let o = pdmp(&["check", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("inequality") && err.contains("slack"), "{err}");
    let report = json(&out.join("check.json"));
    assert_eq!(report["pass"], false);
    assert!(report["growth"]["inequalities"].as_array().unwrap().iter().any(|i| i["violations"].as_u64().unwrap() > 0));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&pdmp(&["check", "--config", s(&missing)])), 2);
    let bad = write(dir.path(), "bad.toml", "[model]\nid = \"A\"\nunknown = 3\n");
    assert_eq!(code(&pdmp(&["check", "--config", s(&bad)])), 2);
    let unknown = write(dir.path(), "unknown.toml", "[model]\nid = \"Z\"\n");
    assert_eq!(code(&pdmp(&["check", "--config", s(&unknown)])), 2);
    assert_eq!(code(&pdmp(&["simulate", "--benchmark", "A", "--seed", "abc"])), 2);
    assert_eq!(code(&pdmp(&["solve", "--benchmark", "A", "--mode", "discounted"])), 2);
    assert_eq!(code(&pdmp(&["--jobs", "0", "check", "--benchmark", "A"])), 2);
    assert_eq!(code(&pdmp(&["frobnicate"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_pdmp"))
        .args(["simulate", "--benchmark", "A", "--reps", "2", "--horizon", "5"])
        .env("PDMP_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn discounted_zero_cost_gives_zero_values() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "zero.toml",
        "[model]\nid = \"A\"\n[model.overrides]\nrunning_cost = 0.0\nboundary_cost = 0.0\n",
    );
    let out = dir.path().join("s");
    let o = pdmp(&["solve", "--config", s(&cfg), "--mode", "discounted", "--alpha", "0.5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(&out.join("archive.json"));
    assert!(a["value"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() == 0.0));
    let csv = std::fs::read_to_string(out.join("value.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("0")), "{csv}");
    assert!(out.join("selector.csv").exists());
}

#[test]
fn average_constant_cost_gives_that_cost() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "const.toml",
        "[model]\nid = \"A\"\n[model.overrides]\nrunning_cost = 1.3\nboundary_cost = 0.0\n",
    );
    let out = dir.path().join("s");
    let o = pdmp(&["solve", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(&out.join("archive.json"));
    assert!((a["rho"].as_f64().unwrap() - 1.3).abs() < 1e-6, "{}", a["rho"]);
    let trace = std::fs::read_to_string(out.join("rho_trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("k,alpha,rho"));
}

#[test]
fn failed_solve_keeps_residual_trace() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "short.toml",
        "[model]\nid = \"A\"\n[numerics]\nmax_iter = 2\n[solver]\nstrategy = \"value-iteration\"\n",
    );
    let out = dir.path().join("s");
    let o = pdmp(&["solve", "--config", s(&cfg), "--mode", "discounted", "--alpha", "0.25", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let a = json(&out.join("archive.json"));
    assert_eq!(a["status"], "failed");
    assert!(!a["residual_trace"].as_array().unwrap().is_empty());
}

const DETERMINISTIC: &str = r#"
[model]
id = "custom"
[model.custom]
lower = 0.0
upper = 1.0
velocity = -1.0
actions = [1.0]
intensity = { x = [0.0], y = [0.0] }
running_cost = { x = [0.0], y = [1.0] }
boundary_cost = 0.5
r_bar = 0.5
kernel_support = [0.75]
[grid]
axes = [[0.05, 0.95, 0.05]]
"#;

#[test]
fn zero_intensity_record_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "det.toml", DETERMINISTIC);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = pdmp(&[
            "simulate", "--config", s(&cfg), "--x", "0.5", "--horizon", "10", "--reps", "4", "--seed", seed, "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("1", "a"), run("99", "b"));
    assert_eq!(
        std::fs::read(a.join("trajectory.csv")).unwrap(),
        std::fs::read(b.join("trajectory.csv")).unwrap()
    );
    let e = json(&a.join("estimate.json"));
    let est = &e["result"]["estimate"]["estimate"];
    assert_eq!(est["std_error"].as_f64().unwrap(), 0.0);
    // Boundary hits at 0.5, 1.25, 2.0, …, 9.5: 13 of them, each costing 0.5.
    let expected = (10.0 + 13.0 * 0.5) / 10.0;
    assert!((est["mean"].as_f64().unwrap() - expected).abs() < 1e-9, "{est}");
    assert_eq!(e["trajectory"]["boundary_hits"], 13);
}

#[test]
fn simulate_is_byte_reproducible_and_env_seed_wins() {
    let dir = TempDir::new().unwrap();
    let args = |out: &Path, seed: &str| {
        vec![
            "simulate".to_string(),
            "--benchmark".into(),
            "A".into(),
            "--horizon".into(),
            "50".into(),
            "--reps".into(),
            "20".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&pdmp(&args(&a, "5").iter().map(String::as_str).collect::<Vec<_>>())), 0);
    assert_eq!(code(&pdmp(&args(&b, "5").iter().map(String::as_str).collect::<Vec<_>>())), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_pdmp"))
        .args(args(&c, "9"))
        .env("PDMP_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for f in ["estimate.json", "trajectory.csv", "running_average.csv"] {
        let fa = std::fs::read(a.join(f)).unwrap();
        assert_eq!(fa, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(fa, std::fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn archive_from_other_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    assert_eq!(code(&pdmp(&["solve", "--benchmark", "A", "--out", s(&out)])), 0);
    let archive = out.join("archive.json");
    let coarse = write(dir.path(), "coarse.toml", "[model]\nid = \"A\"\n[grid]\naxes = [[0.05, 0.95, 0.05]]\n");
    let o = pdmp(&["simulate", "--config", s(&coarse), "--policy", s(&archive), "--reps", "2", "--horizon", "5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
    let o = pdmp(&["simulate", "--benchmark", "A", "--policy", s(&archive), "--reps", "2", "--horizon", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn solved_policy_estimate_is_near_rho() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    assert_eq!(code(&pdmp(&["--jobs", "1", "solve", "--benchmark", "A", "--out", s(&out)])), 0);
    let rho = json(&out.join("archive.json"))["rho"].as_f64().unwrap();
    let archive = out.join("archive.json");
    let o = pdmp(&["simulate", "--benchmark", "A", "--policy", s(&archive), "--horizon", "1000", "--reps", "200"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let est = &v["result"]["estimate"]["estimate"];
    let (mean, se) = (est["mean"].as_f64().unwrap(), est["std_error"].as_f64().unwrap());
    assert!((mean - rho).abs() <= 3.0 * se + 0.02 * rho, "mean {mean} se {se} rho {rho}");
}
