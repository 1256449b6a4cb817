use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use implied_corr::{CorrMatrix, MarketSpec};
use implied_corr_cli::io;
use implied_corr_cli::snapshot::{save_snapshot, MarketSnapshot};
use nalgebra::DMatrix;
use serde_json::Value;

fn impliedcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impliedcorr"))
        .args(args)
        .env_remove("IMPLIEDCORR_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path, spec: MarketSpec, target: Option<CorrMatrix>) -> PathBuf {
    let snap = MarketSnapshot {
        date: "2021-06".into(),
        spec,
        target,
        returns: None,
        factor_loadings: None,
    };
    save_snapshot(&snap, dir).unwrap()
}

fn two_asset(dir: &Path) -> PathBuf {
    snapshot(dir, MarketSpec::single(vec![0.2, 0.2], vec![0.5, 0.5], 0.03).unwrap(), None)
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    let out = impliedcorr(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.json")
}

#[test]
fn equicorr_prints_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_asset(dir.path());
    let out = impliedcorr(&["equicorr", "--snapshot", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!((v["c_bar"].as_f64().unwrap() - 0.5).abs() <= 4.0 * f64::EPSILON);

    let csv = impliedcorr(&["--format", "csv", "equicorr", "--snapshot", s(&manifest)]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("key,value\n"));
    assert!(text.lines().any(|l| l.starts_with("c_bar,0.5") || l.starts_with("c_bar,0.4999")));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let out = impliedcorr(&["check", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(impliedcorr(&["--help"]).status.code(), Some(0));
    assert_eq!(impliedcorr(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_snapshot_is_an_io_error() {
    let out = impliedcorr(&["equicorr", "--snapshot", "/nonexistent/manifest.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invalid_weights_are_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = two_asset(dir.path());
    std::fs::write(dir.path().join("weights_0.csv"), "weight\n0.49\n0.49\n").unwrap();
    let out = impliedcorr(&["equicorr", "--snapshot", s(&manifest)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn nearest_on_zero_premium_market_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("snap"), &["--n", "20", "--k-true", "3", "--seed", "4"]);
    let out_dir = dir.path().join("out");
    let out = impliedcorr(&[
        "--tol-fn",
        "1e-12",
        "--out-dir",
        s(&out_dir),
        "nearest",
        "--snapshot",
        s(&manifest),
        "--k",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!(v["solver"]["fn"].as_f64().unwrap() <= 1e-6);
    assert!(v["solver"]["constraint_residual"].as_f64().unwrap().abs() <= 1e-6);

    // the emitted matrix re-ingests and passes the mathematical conditions
    let check = impliedcorr(&["check", "--snapshot", s(&manifest), "--matrix", s(&out_dir.join("C_star.csv"))]);
    assert_eq!(check.status.code(), Some(0));
    let c = stdout_json(&check);
    assert_eq!(c["mathematically_feasible"], Value::Bool(true));
    assert_eq!(c["report"]["economically_matched"], Value::Bool(true));
    assert!(out_dir.join("X_star.csv").exists());
}

#[test]
fn non_convergence_exits_two_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("snap"), &["--n", "20", "--target", "historical"]);
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"k": 2, "max_outer_iter": 1, "fn_tol": 1e-14}"#).unwrap();
    let out = impliedcorr(&["--config", s(&config), "nearest", "--snapshot", s(&manifest)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["solver"]["converged"], Value::Bool(false));
}

#[test]
fn repair_returns_psd_matrix_for_non_psd_prior() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = snapshot(
        dir.path(),
        MarketSpec::single(vec![0.2, 0.3, 0.25], vec![0.3, 0.3, 0.4], 0.035).unwrap(),
        None,
    );
    let prior = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
    let prior_path = dir.path().join("prior.csv");
    io::write_matrix(&prior_path, &prior).unwrap();
    for extra in [&[][..], &["--direct"][..]] {
        let mut args = vec!["repair", "--snapshot", s(&manifest), "--prior", s(&prior_path), "--k", "2"];
        args.extend_from_slice(extra);
        let out = impliedcorr(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let v = stdout_json(&out);
        assert!(v["prior_min_eigenvalue"].as_f64().unwrap() < 0.0);
        assert_eq!(v["psd"], Value::Bool(true));
        assert_eq!(v["mathematically_feasible"], Value::Bool(true));
        assert!(v["report"]["constraint_residuals"][0].as_f64().unwrap().abs() <= 1e-6);
    }
}

#[test]
fn adjust_reports_blend_weight() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = snapshot(
        dir.path(),
        MarketSpec::single(vec![0.2, 0.2], vec![0.5, 0.5], 0.03).unwrap(),
        Some(CorrMatrix::identity(2)),
    );
    let out = impliedcorr(&["adjust", "--snapshot", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!((v["alpha_hat"].as_f64().unwrap() - 0.5).abs() <= 1e-15);
    assert!(v["constraint_residual"].as_f64().unwrap().abs() <= 1e-12);
}

#[test]
fn synth_is_seeded_and_reads_seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth(&a, &["--seed", "11", "--target", "mean-reverting"]);
    let out = Command::new(env!("CARGO_BIN_EXE_impliedcorr"))
        .args(["synth", "--out-dir", s(&b), "--target", "mean-reverting"])
        .env("IMPLIEDCORR_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["manifest.json", "sigma.csv", "weights_0.csv", "target.csv", "asset_returns.csv", "c_true.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    synth(&c, &["--seed", "12", "--target", "mean-reverting"]);
    assert_ne!(std::fs::read(a.join("target.csv")).unwrap(), std::fs::read(c.join("target.csv")).unwrap());
}

#[test]
fn economic_from_snapshot_loadings_meets_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("snap"), &["--n", "15", "--crp", "0.05", "--seed", "2"]);
    let out_dir = dir.path().join("out");
    let out = impliedcorr(&["--out-dir", s(&out_dir), "economic", "--snapshot", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!(v["constraint_residual"].as_f64().unwrap().abs() <= 1e-8);
    assert!(v["alpha_tilde"].as_f64().unwrap() > 0.0);
    assert!(out_dir.join("C_Q.csv").exists());

    // explicit single-factor loadings file
    let (_, x) = io::read_table(&dir.path().join("snap/factor_loadings.csv")).unwrap();
    assert_eq!(x.nrows(), 15);
    let loadings = dir.path().join("xp.csv");
    io::write_table(&loadings, &["F1".to_string()], &x.columns(0, 1).clone_owned()).unwrap();
    let out = impliedcorr(&["economic", "--snapshot", s(&manifest), "--loadings", s(&loadings)]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn vg_convert_with_and_without_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let c_dir = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
    io::write_matrix(&dir.path().join("c_dir.csv"), &c_dir).unwrap();
    let params = dir.path().join("vg.json");
    std::fs::write(
        &params,
        r#"{"xi": [0.0, 0.0], "omega": [0.2, 0.3], "theta": [-0.1, -0.05], "nu": 0.5, "c_dir": "c_dir.csv"}"#,
    )
    .unwrap();
    let out = impliedcorr(&["vg-convert", "--params", s(&params)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let sigma0 = v["sigma_centered"][0].as_f64().unwrap();
    assert!((sigma0 - (0.04f64 + 0.5 * 0.01).sqrt()).abs() <= 1e-15);

    let sigma = [sigma0, v["sigma_centered"][1].as_f64().unwrap()];
    let manifest = snapshot(
        &dir.path().join("snap"),
        MarketSpec::single(sigma.to_vec(), vec![0.5, 0.5], 0.05).unwrap(),
        None,
    );
    let out = impliedcorr(&["--tol-fn", "1e-10", "vg-convert", "--params", s(&params), "--snapshot", s(&manifest)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let recovered = v["recovered_index_variance"].as_f64().unwrap();
    assert!((recovered - 0.05).abs() <= 1e-6, "{recovered}");
}

#[test]
fn bench_writes_tables_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        r#"{"n": 10, "k_true": 2, "instances": 2, "record_timings": false,
            "cells": [{"model": "equicorrelation", "target": "true"},
                      {"model": "nicm", "k": 2, "target": "historical"}]}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("bench");
    let out = impliedcorr(&["--out-dir", s(&out_dir), "bench", "--suite", s(&suite), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().contains("fn.mean"));
    assert_eq!(text.lines().count(), 3);
    assert_eq!(std::fs::read_dir(out_dir.join("runs")).unwrap().count(), 4);
    assert!(out_dir.join("bench.csv").exists());
}
