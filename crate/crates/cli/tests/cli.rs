//! End-to-end runs of the `gapcal` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const EX_B: &str = r#"{"states":[0,1,2],"probs":[0.25,0.5,0.25],"drift":[0],"killing":[1],"t":1,"law":{"kind":"exponential"}}"#;
const UNIFORM: &str = r#"{"measure":[{"weight":1,"kind":"uniform","lo":0,"hi":1}],"drift":{"pieces":[{"value":0}]},"t":1,"law":{"kind":"deterministic"}}"#;

fn gapcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapcal")).current_dir(dir).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_code(out: &Output) -> i64 {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["code"].as_i64().unwrap()
}

#[test]
fn solve_closed_form_instance() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exb.json"), EX_B).unwrap();
    let out = gapcal(dir.path(), &["solve", "exb.json", "-o", "sol.json", "--csv", "sm.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sol = json(&dir.path().join("sol.json"));
    assert!((sol["alpha"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-10);
    assert!((sol["lambda"][1].as_f64().unwrap() - 1.0).abs() < 1e-10);
    let csv = fs::read_to_string(dir.path().join("sm.csv")).unwrap();
    assert!(csv.starts_with("state,m,a,lambda\n"));
    assert_eq!(csv.lines().count(), 4);

    let out = gapcal(dir.path(), &["verify", "exb.json", "sol.json", "-o", "rep.json"]);
    assert!(out.status.success());
    assert_eq!(json(&dir.path().join("rep.json"))["passed"], Value::Bool(true));
}

#[test]
fn tampered_solution_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exb.json"), EX_B).unwrap();
    assert!(gapcal(dir.path(), &["solve", "exb.json", "-o", "sol.json"]).status.success());
    let mut sol = json(&dir.path().join("sol.json"));
    sol["lambda"][1] = Value::from(1.1);
    fs::write(dir.path().join("bad.json"), sol.to_string()).unwrap();
    let out = gapcal(dir.path(), &["verify", "exb.json", "bad.json", "-o", "rep.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_code(&out), 2);
    let rep = json(&dir.path().join("rep.json"));
    assert!(rep["deviation"].as_f64().unwrap() > 1e-3);
}

#[test]
fn hypcheck_passes_for_driftless_compact_target() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("u.json"), UNIFORM).unwrap();
    let out = gapcal(dir.path(), &["hypcheck", "u.json"]);
    assert!(out.status.success());
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["absolutely_continuous", "neighborhood_ok", "integral_ok", "tail_ok", "passed"] {
        assert_eq!(rep[key], Value::Bool(true), "{key}");
    }
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exb.json"), EX_B).unwrap();
    fs::write(dir.path().join("u.json"), UNIFORM).unwrap();
    assert!(gapcal(dir.path(), &["solve", "exb.json", "-o", "sol.json"]).status.success());
    let runs: Vec<Vec<Vec<u8>>> = (0..2)
        .map(|_| {
            vec![
                gapcal(dir.path(), &["solve", "exb.json"]).stdout,
                gapcal(dir.path(), &["simulate", "exb.json", "sol.json", "--paths", "20000", "--seed", "7"]).stdout,
                gapcal(dir.path(), &["verify", "exb.json", "sol.json", "--mc-check", "--paths", "20000", "--seed", "7"]).stdout,
                gapcal(dir.path(), &["atomize", "u.json", "-n", "3"]).stdout,
                gapcal(dir.path(), &["sweep", "u.json", "--n-lo", "3", "--n-hi", "4"]).stdout,
            ]
        })
        .collect();
    assert!(runs[0].iter().all(|o| !o.is_empty()));
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn solution_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let inst = r#"{"states":[-1,0.3,1.7,2.2],"probs":[0.1,0.4,0.3,0.2],"drift":[0.2,-0.5],"killing":[0.3,1.1],"t":0.7,"law":{"kind":"gamma","r":3}}"#;
    fs::write(dir.path().join("i.json"), inst).unwrap();
    assert!(gapcal(dir.path(), &["solve", "i.json", "-o", "s.json"]).status.success());
    let out = gapcal(dir.path(), &["verify", "i.json", "s.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = gapcal(dir.path(), &["solve", "missing.json"]);
    assert_eq!((out.status.code(), stderr_code(&out)), (Some(3), 3));

    let bad = EX_B.replace(r#""drift":[0]"#, r#""drift":[1]"#);
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    let out = gapcal(dir.path(), &["solve", "bad.json"]);
    assert_eq!((out.status.code(), stderr_code(&out)), (Some(1), 1));

    fs::write(dir.path().join("exb.json"), EX_B).unwrap();
    let out = gapcal(dir.path(), &["solve", "exb.json", "--tol", "-1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = gapcal(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn law_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exb.json"), EX_B).unwrap();
    let out = gapcal(dir.path(), &["solve", "exb.json", "--r", "4", "--t", "2"]);
    assert!(out.status.success());
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sol["diagnostics"]["r_used"], Value::from(4));
    let h = gapcal(dir.path(), &["solve", "exb.json", "--h", "0.1"]);
    assert!(h.status.success());
}
