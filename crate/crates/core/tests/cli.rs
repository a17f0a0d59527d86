//! End-to-end runs of the `impulsive-lab` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulsive-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fmt_point(v: &Value) -> String {
    let xs: Vec<String> = v.as_array().unwrap().iter().map(|x| format!("{:.17}", x.as_f64().unwrap())).collect();
    xs.join(",")
}

#[test]
fn validate_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["validate", "S1a"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let manifest = read(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "validate");
    assert_eq!(manifest["exit_code"], 0);
    assert!(String::from_utf8(out.stdout).unwrap().contains("validate.json"));
}

#[test]
fn closed_config_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["close", "S2", "--target", "0.5,0.25,0.25", "--eps", "0.05"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let closed = read(&dir.path().join("close.json"));
    let orbit = &closed["result"]["orbit"];
    let k = orbit["k"].as_u64().unwrap().to_string();
    let y = fmt_point(&orbit["representative"]);
    let config = dir.path().join("closed-config.json");

    // The emitted configuration rebuilds the perturbed system with the same orbit.
    let replay = dir.path().join("replay");
    let out = lab(&["poincare", config.to_str().unwrap(), "--y", &y, "--k", &k, "--find"], &replay);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let found = &read(&replay.join("poincare.json"))["result"]["orbit"];
    assert!(found["residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(found["k"], orbit["k"]);
    assert!((found["period"].as_f64().unwrap() - orbit["period"].as_f64().unwrap()).abs() <= 1e-6);
    let manifest = read(&replay.join("manifest.json"));
    let hash = read(&dir.path().join("manifest.json"))["config_hash"].clone();
    assert_ne!(manifest["config_hash"], hash);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"schema_version\": 1,\n  \"builtin\": \"S1a\",\n  \"colour\": 3\n}\n").unwrap();
    let out = lab(&["validate", path.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 4"));
}

#[test]
fn unknown_system_and_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["simulate", "S7", "--x0", "0,2,0", "--t", "1"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["simulate", "S1a", "--x0", "0,2", "--t", "1"], dir.path()).status.code(), Some(2));
    assert_eq!(lab(&["close", "S3", "--target", "1,0,0", "--eps", "0.05"], dir.path()).status.code(), Some(2));
}

#[test]
fn densify_budget_exhaustion_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["densify", "S2", "--mode", "impulse", "--eps", "0.1", "--budget", "0"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let report = read(&dir.path().join("densify.json"));
    assert!(report["result"]["final_gap"].is_null());
}
