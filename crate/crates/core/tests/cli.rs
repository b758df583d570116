//! End-to-end runs of the `ncollapse` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ncollapse"))
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const INTERIOR: &str = "[problem]\nk_a = 5\nk_b = 5\nn_a = 500\nn_b = 100\n[reg]\nlambda_Z = 0.002\nlambda_b = 0.01\n";

#[test]
fn solve_interior_compares_routes() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "c.toml", INTERIOR);
    let out = tmp.path().join("out");
    let o = run(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["results.csv", "summary.json", "metadata.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let s = summary(&out);
    let records = s["records"].as_array().unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r["regime"] == "Interior"));
    assert!(s["comparison"]["zbar_relative_distance"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn three_clusters_run_numeric_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        "[problem]\nclass_sizes = [40, 40, 20, 20, 5, 5]\n[reg]\nlambda_Z = 0.01\nlambda_b = 0.1\n",
    );
    let out = tmp.path().join("out");
    let o = run(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric only"));
    let s = summary(&out);
    let records = s["records"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["route"], "numeric");
    assert!(records[0]["diagnostics"]["block_fit_residual"].as_f64().is_some());

    // Asking for the analytic route explicitly is a usage error.
    let cfg = config(tmp.path(), "d.toml", "[problem]\nclass_sizes = [40, 20, 5]\n[reg]\nlambda_Z = 0.01\nlambda_b = 0.1\n[solver]\nroute = \"analytic\"\n");
    assert_eq!(run(&["solve"], &cfg, &out).status.code(), Some(2));
}

#[test]
fn malformed_config_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = config(tmp.path(), "c.toml", &format!("{INTERIOR}lambda_q = 3\n"));
    let o = run(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda_q"), "{}", stderr(&o));

    let cfg = config(tmp.path(), "d.toml", &INTERIOR.replace("lambda_Z = 0.002", "lambda_Z = -1"));
    let o = run(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda_Z") || stderr(&o).contains("lambda_z"), "{}", stderr(&o));

    let missing = tmp.path().join("nope.toml");
    assert_eq!(run(&["solve"], &missing, &out).status.code(), Some(2));
}

#[test]
fn empty_grid_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for sweep in [
        "[sweep]\nparameter = \"lambda_Z\"\nmin = 0.01\nmax = 0.001\nsteps = 10\n",
        "[sweep]\nparameter = \"lambda_Z\"\nmin = 0.001\nmax = 0.01\nsteps = 0\n",
    ] {
        let cfg = config(tmp.path(), "c.toml", &format!("{INTERIOR}{sweep}"));
        assert_eq!(run(&["sweep"], &cfg, &out).status.code(), Some(2));
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = bin().args(["solve", "--config", "x.toml", "--frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn threshold_reports_the_pair_and_lambda_star() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = config(
        tmp.path(),
        "c.toml",
        "[problem]\nk_a = 3\nk_b = 7\nn_a = 500\nn_b = 100\n[reg]\nlambda_Z = 0.005\nlambda_b = 0.01\n",
    );
    let o = run(&["threshold", "--bias-free"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&out);
    let lo = s["lambda_minority"].as_f64().unwrap();
    let hi = s["lambda_complete"].as_f64().unwrap();
    let star = s["lambda_star"].as_f64().unwrap();
    assert!((lo - 0.0045455).abs() < 5e-8 && (hi - 0.0101639).abs() < 5e-8);
    assert!(lo < star && star < hi);

    let cfg = config(
        tmp.path(),
        "d.toml",
        "[problem]\nk_a = 5\nk_b = 5\nn_a = 500\nn_b = 100\n[reg]\nlambda_Z = 0.005\nlambda_b = 0.01\n",
    );
    assert_eq!(run(&["threshold"], &cfg, &out).status.code(), Some(0));
    assert_eq!(summary(&out)["ratio"]["ratio"].as_f64(), Some(3.0));
}

#[test]
fn asymptotic_single_point_and_skipped_rows() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let base = "[asymptotic]\nk_a = 5\nk_b = 5\nr = 2.0\nlambda_b = { kind = \"constant\", value = 0.01 }\n";
    let cfg = config(tmp.path(), "c.toml", &format!("{base}lambda = 0.1\nn_grid = [1e4]\n"));
    let o = run(&["asymptotic"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["rows"].as_array().unwrap().len(), 1);
    assert!(s["slope"].is_null());
    assert!(stderr(&o).contains("slope"), "{}", stderr(&o));

    // N·λ_Z = 5 >= sqrt(n_B) at N = 100.
    let cfg = config(tmp.path(), "d.toml", &format!("{base}lambda = 5.0\nn_grid = [100, 1e4, 1e5]\n"));
    let o = run(&["asymptotic"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["rows"].as_array().unwrap().len(), 2);
    assert_eq!(s["skipped"].as_array().unwrap().len(), 1);
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn validate_passes_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "v.toml", "[validate]\nseed = 3\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let oa = run(&["validate", "--workers", "1"], &cfg, &a);
    let ob = run(&["validate", "--workers", "4"], &cfg, &b);
    assert_eq!(oa.status.code(), Some(0), "{}", String::from_utf8_lossy(&oa.stdout));
    assert_eq!(ob.status.code(), Some(0));
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn injected_fault_fails_exactly_that_suite() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "v.toml",
        "[validate]\nseed = 5\ngradient_instances = 5\nprox_instances = 5\ndual_route_instances = 2\nkkt_instances = 5\nhessian_instances = 5\n",
    );
    let out = tmp.path().join("out");
    for suite in ["gradient", "prox", "dual_route", "kkt", "hessian"] {
        let o = run(&["validate", "--inject-fault", suite], &cfg, &out);
        assert_eq!(o.status.code(), Some(1), "{suite}");
        let s = summary(&out);
        let failed: Vec<&str> = s["suites"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["passed"] == false)
            .map(|r| r["suite"].as_str().unwrap())
            .collect();
        assert_eq!(failed, vec![suite]);
    }
    assert_eq!(run(&["validate", "--inject-fault", "bogus"], &cfg, &out).status.code(), Some(2));
}

#[test]
fn sweep_outputs_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "c.toml",
        &format!(
            "{INTERIOR}[sweep]\nparameter = \"lambda_Z\"\nmin = 0.001\nmax = 0.012\nsteps = 12\nspacing = \"log\"\n"
        ),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["sweep", "--workers", "1"], &cfg, &a).status.code(), Some(0));
    assert_eq!(run(&["sweep", "--workers", "3"], &cfg, &b).status.code(), Some(0));
    for f in ["results.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(csv.ends_with('\n'));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda_Z,regime,a,b,c,d,m,majority_rank,minority_rank,etf_deviation,xi,objective,stationarity,numeric_distance"
    );
    assert_eq!(lines.count(), 12);
    let meta: Value = serde_json::from_str(&fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["wall_time_s"].as_f64().is_some());
}
