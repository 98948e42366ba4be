use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lincheck::histories::{from_json, is_sequential};

const H23: &str = r#"{"events":[
 {"op":"push","proc":"p","kind":"invoke","values":[1]},
 {"op":"push","proc":"q","kind":"invoke","values":[2]},
 {"op":"pop","proc":"r","kind":"invoke","values":[]},
 {"op":"push","proc":"q","kind":"response","values":[]},
 {"op":"push","proc":"p","kind":"response","values":[]},
 {"op":"pop","proc":"r","kind":"response","values":["Empty"]}]}"#;

const POPPED_TWICE: &str = r#"{"events":[
 {"op":"push","proc":"p","kind":"invoke","values":[1]},
 {"op":"pop","proc":"q","kind":"invoke","values":[]},
 {"op":"pop","proc":"r","kind":"invoke","values":[]},
 {"op":"pop","proc":"q","kind":"response","values":[1]},
 {"op":"push","proc":"p","kind":"response","values":[]},
 {"op":"pop","proc":"r","kind":"response","values":[1]}]}"#;

fn lincheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lincheck"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn check_reports_witness_for_linearisable_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = lincheck(&["check", &write(dir.path(), "h.json", H23), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["linearisable"], true);
    let w = from_json(&v["witness"].to_string()).unwrap();
    assert!(is_sequential(&w));
    assert_eq!(w.events[0].op, "pop");
}

#[test]
fn check_rejects_value_popped_twice() {
    let dir = tempfile::tempdir().unwrap();
    let out = lincheck(&["check", &write(dir.path(), "h.json", POPPED_TWICE)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = lincheck(&["check", &write(dir.path(), "h.json", &H23[..40])]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(
        lincheck(&["check", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let args = [
        "simulate",
        "--program",
        "HTS",
        "--schedule",
        "random",
        "--samples",
        "40",
        "--seed",
        "5",
        "--json",
    ];
    let (a, b) = (lincheck(&args), lincheck(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["non_linearisable"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_emits_sequential_histories_for_the_atomic_stack() {
    let dir = tempfile::tempdir().unwrap();
    let out = lincheck(&[
        "simulate",
        "--program",
        "HAS",
        "--procs",
        "1",
        "--ops",
        "2",
        "--horizon",
        "12",
        "--schedule",
        "exhaustive",
        "--emit-histories",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let files: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert!(!files.is_empty());
    for f in files {
        let h = from_json(&fs::read_to_string(&f).unwrap()).unwrap();
        assert!(is_sequential(&h), "{}", f.display());
    }
}

#[test]
fn refine_lock_stack_by_treiber_stack_holds() {
    let out = lincheck(&[
        "refine",
        "--abstract",
        "LS",
        "--concrete",
        "TS",
        "--mode",
        "random",
        "--samples",
        "50",
        "--json",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn refine_against_false_fails_with_witness() {
    let out = lincheck(&[
        "refine",
        "--abstract",
        "Enf(False,AS)",
        "--concrete",
        "AS",
        "--procs",
        "1",
        "--horizon",
        "8",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let vacuous = lincheck(&[
        "refine",
        "--abstract",
        "AS",
        "--concrete",
        "Enf(False,AS)",
        "--procs",
        "1",
        "--horizon",
        "8",
    ]);
    assert_eq!(vacuous.status.code(), Some(0));
}

#[test]
fn node_cap_gives_exit_three() {
    let out = Command::new(env!("CARGO_BIN_EXE_lincheck"))
        .args([
            "simulate",
            "--program",
            "TS",
            "--schedule",
            "exhaustive",
            "--horizon",
            "12",
        ])
        .env("LINCHECK_CAP", "1000")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_program_is_an_input_error() {
    let out = lincheck(&["simulate", "--program", "XS"]);
    assert_eq!(out.status.code(), Some(2));
}
