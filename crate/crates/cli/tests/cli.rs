use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .display()
        .to_string()
}

fn ldips(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldips"))
        .args(args)
        .output()
        .unwrap()
}

fn report(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn tmp(dir: &tempfile::TempDir, name: &str) -> String {
    let p: PathBuf = dir.path().join(name);
    p.display().to_string()
}

#[test]
fn synth_output_passes_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "p.asp");
    let domain = fixture("soccer.domain.json");
    let demos = fixture("reference_demos.jsonl");
    let o = ldips(&[
        "synth", "--domain", &domain, "--demos", &demos, "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&o.stderr);
    assert_eq!(r["subcommand"], "synth");
    assert_eq!(r["counts"]["demos"], 207);
    assert_eq!(r["inputs"].as_object().unwrap().len(), 2);
    let o = ldips(&[
        "check", "--domain", &domain, "--policy", &out, "--demos", &demos,
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn check_reports_first_violation() {
    let o = ldips(&[
        "check",
        "--domain",
        &fixture("soccer.domain.json"),
        "--policy",
        &fixture("worked_policy.asp"),
        "--demos",
        &fixture("reference_demos.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error: demo "), "{err}");
    assert_eq!(report(&o.stderr)["outcome"]["status"], "invalid");
}

#[test]
fn contradictory_demos_exit_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "p.asp");
    let o = ldips(&[
        "synth",
        "--domain",
        &fixture("soccer.domain.json"),
        "--demos",
        &fixture("label_flip.jsonl"),
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Goto -> Kick"));
    assert!(!Path::new(&out).exists());
}

#[test]
fn usage_and_io_errors_exit_one() {
    assert_eq!(ldips(&["synth", "--nonsense"]).status.code(), Some(1));
    let o = ldips(&[
        "check",
        "--domain",
        "/no/such/domain.json",
        "--policy",
        "x",
        "--demos",
        "y",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(report(&o.stderr)["outcome"]["exit_code"], 1);
    assert_eq!(ldips(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_schema_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let demos = tmp(&dir, "d.jsonl");
    std::fs::write(
        &demos,
        r#"{"start":"Goto","next":"Kick","world":{"p_r":1,"v_r":[0,0],"p_b":[0,0],"v_b":[0,0]}}"#,
    )
    .unwrap();
    let o = ldips(&[
        "eval",
        "--domain",
        &fixture("soccer.domain.json"),
        "--policy",
        &fixture("reference.asp"),
        "--demos",
        &demos,
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn enum_stats_csv() {
    let o = ldips(&[
        "enum-stats",
        "--max-depth",
        "1",
        "--domain",
        &fixture("soccer.domain.json"),
        "--modes",
        "full,none",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout),
        "mode,depth,count\nfull,1,4\nnone,1,4\n"
    );
}

#[test]
fn simulate_writes_cells_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = tmp(&dir, "cells.csv");
    let args = [
        "simulate",
        "--domain",
        &fixture("soccer.domain.json"),
        "--policy",
        &fixture("reference.asp"),
        "--grid",
        "4x3",
        "--seed",
        "7",
        "--csv",
        &csv,
    ];
    let a = ldips(&args);
    let cells = std::fs::read_to_string(&csv).unwrap();
    let b = ldips(&args);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(cells, std::fs::read_to_string(&csv).unwrap());
    assert_eq!(cells.lines().count(), 13);
    assert!(
        ldips(&[
            "simulate",
            "--domain",
            &fixture("soccer.domain.json"),
            "--policy",
            &fixture("reference.asp"),
            "--perturb",
            "friction=-1"
        ])
        .status
        .code()
            == Some(1)
    );
}

#[test]
fn eval_prints_one_action_per_record() {
    let o = ldips(&[
        "eval",
        "--domain",
        &fixture("soccer.domain.json"),
        "--policy",
        &fixture("reference.asp"),
        "--demos",
        &fixture("reference_demos.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 207);
    assert_eq!(report(&o.stderr)["counts"]["agree"], 207);
}
