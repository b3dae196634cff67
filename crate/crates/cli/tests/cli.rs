use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use benchsim_core::processes::{phi_time, MmmParams};
use serde_json::Value;

fn benchsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_benchsim")).args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_simulate_writes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    for fmt in ["csv", "json"] {
        let a = tmp.path().join(format!("a-{fmt}"));
        let b = tmp.path().join(format!("b-{fmt}"));
        for d in [&a, &b] {
            stdout_json(&benchsim(&["--seed", "11", "--paths", "300", "--format", fmt, "--out", d.to_str().unwrap(), "simulate"]));
        }
        let (fa, fb) = (dir_files(&a), dir_files(&b));
        assert_eq!(fa.len(), 2);
        assert_eq!(fa, fb);
    }
}

#[test]
fn different_seeds_write_different_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    stdout_json(&benchsim(&["--seed", "1", "--paths", "50", "--out", a.to_str().unwrap(), "simulate"]));
    stdout_json(&benchsim(&["--seed", "2", "--paths", "50", "--out", b.to_str().unwrap(), "simulate"]));
    assert_ne!(fs::read(a.join("paths.csv")).unwrap(), fs::read(b.join("paths.csv")).unwrap());
}

#[test]
fn wishart_below_existence_bound_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = benchsim(&["--out", tmp.path().to_str().unwrap(), "simulate", "--alpha", "1.2", "--d", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("alpha >= d - 1"), "{msg}");
    assert!(msg.contains("1.2"), "{msg}");
}

#[test]
fn wishart_at_existence_bound_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |alpha: &str| stdout_json(&benchsim(&["--paths", "200", "--out", tmp.path().to_str().unwrap(), "simulate", "--alpha", alpha, "--d", "3", "--steps", "5"]));
    assert_eq!(run("2")["scheme"], "euler");
    assert_eq!(run("2")["existence"], "weak");
    assert_eq!(run("3")["scheme"], "matrix_brownian_squaring");
    assert_eq!(run("4.5")["existence"], "strong");
}

#[test]
fn simulated_gop_mean_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&benchsim(&["--seed", "5", "--paths", "20000", "--T", "5", "--format", "json", "--out", tmp.path().to_str().unwrap(), "simulate", "--steps", "5"]));
    let p = MmmParams::stylized();
    for row in v["summary"].as_array().unwrap() {
        let t = row["time"].as_f64().unwrap();
        let (m, se) = (row["mean"].as_f64().unwrap(), row["std_error"].as_f64().unwrap());
        let exact = (p.r * t).exp() * (p.s0 + 4.0 * phi_time(&p, t).unwrap());
        if t == 0.0 {
            assert_eq!(m, p.s0);
        } else {
            assert!((m - exact).abs() < 3.0 * se, "t={t}: {m} ± {se} vs {exact}");
        }
    }
    let on_disk: Value = serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk["result"], v["summary"]);
    assert_eq!(on_disk["provenance"]["seed"], 5);
}

#[test]
fn index_call_at_zero_strike_prices_the_index() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&benchsim(&["--preset", "stylized", "--strike", "0", "--out", tmp.path().to_str().unwrap(), "price", "--payoff", "index_call"]));
    let e = &v["estimate"];
    assert_eq!(e["value"].as_f64(), Some(MmmParams::stylized().s0));
    assert_eq!(e["std_error"].as_f64(), Some(0.0));
    let ledger = fs::read_to_string(tmp.path().join("ledger.csv")).unwrap();
    assert!(ledger.lines().any(|l| l.starts_with("payoff,strike")));
    assert!(ledger.lines().any(|l| l.starts_with("eu_call_on_index,0e0")));
}

#[test]
fn fx_call_mc_agrees_with_oracle_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mc = stdout_json(&benchsim(&["--rho", "0", "--strike", "1.1", "--paths", "40000", "--seed", "9", "--out", out, "price", "--payoff", "fx_call"]));
    let oracle = stdout_json(&benchsim(&["--rho", "0", "--strike", "1.1", "--out", out, "validate", "fx-oracle"]));
    let (v, se) = (mc["estimate"]["value"].as_f64().unwrap(), mc["estimate"]["std_error"].as_f64().unwrap());
    let q = oracle["report"]["checks"][0]["value"].as_f64().unwrap();
    assert!((v - q).abs() < 3.0 * se, "{v} ± {se} vs {q}");
}

#[test]
fn malformed_json_reports_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\n  \"model\": {\"type\": \"mmm\",\n").unwrap();
    let o = benchsim(&["--config", cfg.to_str().unwrap(), "price"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 3"), "{msg}");
    assert!(msg.contains("column"), "{msg}");
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    let mut v: Value = serde_json::from_str(include_str!("../presets/stylized.json")).unwrap();
    v["mc"]["n_pathz"] = 5.into();
    fs::write(&cfg, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let o = benchsim(&["--config", cfg.to_str().unwrap(), "price"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("`mc.n_pathz`"), "{msg}");
}

#[test]
fn invalid_parameter_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = benchsim(&["--T", "-1", "--out", tmp.path().to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = benchsim(&["--preset", "nope", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stylized"));
}

#[test]
fn besq_drift_is_case_one() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&benchsim(&["--out", tmp.path().to_str().unwrap(), "check-symmetry", "--drift", "besq", "--delta", "4"]));
    assert_eq!(v["report"]["matched_case"], 1);
    assert_eq!(v["report"]["constants"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn linear_drift_has_no_case_one_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&benchsim(&["--out", tmp.path().to_str().unwrap(), "check-symmetry", "--drift", "linear", "--c", "0.5"]));
    assert_ne!(v["report"]["matched_case"], 1);
    assert!(v["report"]["case1_pde_residual"].is_null());
}

#[test]
fn density_report_has_unit_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&benchsim(&["--preset", "stylized", "--T", "1", "--out", tmp.path().to_str().unwrap(), "density", "--ny", "61", "--nv", "61"]));
    let r = &v["report"];
    assert!((r["total_mass"].as_f64().unwrap() - 1.0).abs() < 2e-3);
    assert!(r["y_marginal_max_rel_error"].as_f64().unwrap() < 2e-3);
    assert!(tmp.path().join("density.csv").exists());
    assert!(tmp.path().join("density_report.json").exists());
}

#[test]
fn validate_all_has_no_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let o = benchsim(&["--out", tmp.path().to_str().unwrap(), "validate", "all"]);
    let v = stdout_json(&o);
    assert_eq!(v["report"]["failures"], 0, "{}", serde_json::to_string_pretty(&v["report"]).unwrap());
    let on_disk: Value = serde_json::from_slice(&fs::read(tmp.path().join("validate.json")).unwrap()).unwrap();
    assert_eq!(on_disk["result"]["failures"], 0);
}

#[test]
fn presets_and_schema_load() {
    for name in benchsim_cli::config::preset_names() {
        benchsim_cli::config::RunConfig::preset(name).unwrap();
    }
    let v = stdout_json(&benchsim(&["schema"]));
    assert_eq!(v["type"], "object");
}
