use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn rankcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankcast")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_reports_aggregates() {
    let v = json(&rankcast(&["analyze", path(&data("demo_bundle")), "--no-sigma"]));
    assert_eq!(v["matrices"], 3);
    assert_eq!(v["total_params"], 64 * 64 + 2 * 96 * 64);
    let rho = v["aggregates"]["both"]["rho_s_bar"].as_f64().unwrap();
    assert!(rho >= 1.0);
    assert!(v["mdl"]["bits_per_param"].as_f64().unwrap() > 0.0);
    assert!(v["spectra"][0]["sigma"].as_array().unwrap().is_empty());
}

#[test]
fn compress_then_expand_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c");
    let rep = json(&rankcast(&[
        "compress",
        path(&data("demo_bundle")),
        "--method",
        "svdllm",
        "--whiten",
        "--gamma",
        "0.4",
        "--calib",
        path(&data("demo_calib")),
        "--out",
        path(&out_dir),
    ]));
    assert_eq!(rep["config"]["method"], "svdllm_whiten");
    let compressed = rep["compressed_params"].as_u64().unwrap();
    assert!(compressed as f64 <= 0.4 * 16384.0);
    let analysis = json(&rankcast(&["analyze", path(&out_dir), "--no-sigma"]));
    assert_eq!(analysis["total_params"].as_u64().unwrap(), compressed);
    assert_eq!(analysis["compressed"], true);
    let expanded = json(&rankcast(&["analyze", path(&out_dir), "--expand", "--no-sigma"]));
    assert_eq!(expanded["matrices"], 3);
    for m in rep["matrices"].as_array().unwrap() {
        assert!(m["output_error"].as_f64().unwrap() < 1.0);
    }
}

#[test]
fn fit_ranks_planted_formula_first_and_feeds_predict() {
    let dir = tempfile::tempdir().unwrap();
    let fit_path = dir.path().join("fit.json");
    let ranked = json(&rankcast(&[
        "fit",
        path(&data("planted_f1.csv")),
        "--target",
        "rel_degradation",
        "--task",
        "demo",
        "--out",
        path(&fit_path),
    ]));
    assert_eq!(ranked[0]["formula_id"], "F1");
    assert!(ranked[0]["loo_r"].as_f64().unwrap() > 0.999_999);
    let pred = json(&rankcast(&[
        "predict",
        path(&data("demo_bundle")),
        "--gamma",
        "0.5",
        "--coeffs",
        path(&fit_path),
    ]));
    assert_eq!(pred["prediction"]["formula_id"], "X1");
    let rho = pred["record"]["rho_s_bar"].as_f64().unwrap();
    let feature = pred["prediction"]["features"][0].as_f64().unwrap();
    assert!((feature - 0.5 * rho).abs() < 1e-12);
    let f1 = json(&rankcast(&[
        "predict",
        path(&data("demo_bundle")),
        "--gamma",
        "0.5",
        "--coeffs",
        path(&fit_path),
        "--formula",
        "F1",
    ]));
    let value = f1["prediction"]["value"].as_f64().unwrap();
    assert!((value - (0.7 - 0.6 * 0.5)).abs() < 1e-9, "{value}");
}

#[test]
fn discover_and_report() {
    let d = json(&rankcast(&[
        "discover",
        path(&data("planted_f1.csv")),
        "--target",
        "rel_degradation",
        "--population",
        "200",
        "--generations",
        "5",
    ]));
    assert!(d["fit"]["loo_r"].as_f64().unwrap() > 0.99);
    let rows = json(&rankcast(&["report", "ppl-acc", path(&data("ppl_acc.csv"))]));
    for row in rows.as_array().unwrap() {
        assert!((row["r"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn small_synthlab_runs() {
    let sweep = json(&rankcast(&["synthlab", "sweep", "--kind", "mlp", "--dims", "16x24x8", "--trials", "2"]));
    assert_eq!(sweep[0]["rel_errors"].as_array().unwrap().len(), 19);
    let forms = json(&rankcast(&["synthlab", "forms", "--dims", "16x16x8", "--trials", "2"]));
    assert_eq!(forms["fits"].as_array().unwrap().len(), 17);
    let h = json(&rankcast(&["synthlab", "hadamard", "--ranks", "1,2", "--dims", "20x20"]));
    assert_eq!(h["rows"].as_array().unwrap().len(), 2);
    let p = json(&rankcast(&["synthlab", "perturbation", "--trials", "50", "--dims", "6x5"]));
    assert_eq!(p["product_bound_violations"], 0);
    let d = rankcast(&["synthlab", "degradation", "--dims", "16x24x8", "--trials", "2", "--table"]);
    assert!(String::from_utf8(d.stdout).unwrap().contains("asymmetry"));
}

#[test]
fn deterministic_given_seed() {
    let args = ["synthlab", "hadamard", "--ranks", "3", "--dims", "24x20", "--seed", "5"];
    assert_eq!(rankcast(&args).stdout, rankcast(&args).stdout);
}

#[test]
fn exit_codes() {
    let usage = rankcast(&["analyze", path(&data("demo_bundle")), "--nope"]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));
    let missing = rankcast(&["analyze", "/nonexistent/bundle"]);
    assert_eq!(missing.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert_eq!(err["kind"], "data");
    let bad_dims = rankcast(&["synthlab", "hadamard", "--dims", "abc"]);
    assert_eq!(bad_dims.status.code(), Some(1));
    let bad_gamma = rankcast(&["synthlab", "degradation", "--gamma-low", "0.5", "--gamma-high", "0.2"]);
    assert_eq!(bad_gamma.status.code(), Some(2));
}

#[test]
fn numerical_exit_code() {
    // Identical rows give a constant target, which is a numerical degeneracy.
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    let text = std::fs::read_to_string(data("planted_f1.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let row = lines.next().unwrap();
    let body: String = std::iter::repeat_n(format!("{row}\n"), 12).collect();
    std::fs::write(&csv, format!("{header}\n{body}")).unwrap();
    let out = rankcast(&["fit", path(&csv), "--target", "rel_degradation", "--formulas", "F1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
