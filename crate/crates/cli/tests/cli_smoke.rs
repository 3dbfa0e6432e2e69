//! Invokes the built binary the way a user would.

use std::path::PathBuf;
use std::process::{Command, Output};

fn suite_arg() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/sample_suite/suite.toml")
        .display()
        .to_string()
}

fn rtleff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtleff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn validate_passes_on_shipped_suite() {
    let out = rtleff(&["validate", "--suite", &suite_arg()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("5 bundle(s), 0 failed validation"));
}

#[test]
fn run_score_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let run = rtleff(&[
        "run",
        "--suite", &suite_arg(),
        "--endpoint", "mock:mixed",
        "--sim", "mock",
        "--backend", "mock-seeded",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = stdout(&run);
    assert!(text.contains("| all | 0.500 | 0.250 |"), "unexpected table:\n{text}");
    assert!(out_dir.join("scores.csv").exists());

    // A second identical invocation reuses every record.
    let rerun = rtleff(&[
        "run",
        "--suite", &suite_arg(),
        "--endpoint", "mock:mixed",
        "--sim", "mock",
        "--backend", "mock-seeded",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(rerun.status.success());
    let rerun_text = stdout(&rerun);
    assert!(rerun_text.contains("samples: 0 executed, 60 reused"), "{rerun_text}");

    let log = out_dir.join("run.jsonl");
    let score = rtleff(&[
        "score",
        "--log", log.to_str().unwrap(),
        "--ks", "1",
        "--format", "csv",
    ]);
    assert!(score.status.success());
    assert!(stdout(&score).contains("all,0.500,0.250,0.250,0.250"));

    let report_dir = dir.path().join("report");
    let report = rtleff(&[
        "report",
        "--log", log.to_str().unwrap(),
        "--out-dir", report_dir.to_str().unwrap(),
    ]);
    assert!(report.status.success());
    assert!(report_dir.join("report.md").exists());
    assert_eq!(
        std::fs::read(report_dir.join("scores.csv")).unwrap(),
        std::fs::read(out_dir.join("scores.csv")).unwrap(),
        "report must reproduce the run's score table"
    );
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
[run]
suite = "{suite}"
ks = [1, 2]
jobs = 2

[generation]
endpoint_url = "mock:mixed"
samples_per_problem = 4

[sim]
mode = "mock"

[backend]
kind = "mock-seeded"
"#,
            suite = suite_arg()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let run = rtleff(&[
        "run",
        "--config", config_path.to_str().unwrap(),
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("pass@2"));
}

#[test]
fn missing_simulator_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rtleff"))
        .args([
            "run",
            "--suite", &suite_arg(),
            "--endpoint", "mock:mixed",
            "--backend", "mock-seeded",
            "--out-dir", dir.path().join("out").to_str().unwrap(),
        ])
        .env("PATH", "")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found on PATH"));
}

#[test]
fn missing_log_exits_1() {
    let out = rtleff(&["score", "--log", "/definitely/not/here.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_refs_and_ablate_on_mocks() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("audit.csv");
    let verify = rtleff(&[
        "verify-refs",
        "--suite", &suite_arg(),
        "--sim", "mock",
        "--backend", "mock-seeded",
        "--csv", csv.to_str().unwrap(),
    ]);
    assert!(verify.status.success(), "{}", String::from_utf8_lossy(&verify.stderr));
    assert!(stdout(&verify).contains("0 failed"));
    assert!(csv.exists());

    let out_dir = dir.path().join("abl");
    let ablate = rtleff(&[
        "ablate",
        "--suite", &suite_arg(),
        "--backend", "mock-seeded",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(ablate.status.success(), "{}", String::from_utf8_lossy(&ablate.stderr));
    assert!(stdout(&ablate).contains("consistency skipped"));
    assert!(out_dir.join("sweep.csv").exists());
    assert!(out_dir.join("pareto.csv").exists());

    let ablate2 = rtleff(&[
        "ablate",
        "--suite", &suite_arg(),
        "--backend", "mock-seeded",
        "--backend", "mock",
        "--out-dir", out_dir.to_str().unwrap(),
        "--log", out_dir.join("two.jsonl").to_str().unwrap(),
    ]);
    assert!(ablate2.status.success());
    assert!(out_dir.join("consistency.csv").exists());
}
