use std::path::Path;
use std::process::{Command, Output};

use miqcr::bundle::DualSolution;
use miqcr::pipeline::BatchOutcome;
use miqcr::{RunConfig, RunReport, RunStatus};

fn miqcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miqcr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = miqcr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_solve_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("kc.json");
    ok(&["gen", "--n", "8", "--k", "4", "--seed", "3", "--out", path_str(&inst)]);
    let brute: serde_json::Value = serde_json::from_str(&ok(&["bruteforce", "--instance", path_str(&inst)])).unwrap();
    let report: RunReport = serde_json::from_str(&ok(&["solve", "--instance", path_str(&inst), "--delta", "1"])).unwrap();
    assert_eq!(report.status, RunStatus::Optimal);
    assert_eq!(report.optimum, brute["optimum"].as_f64());
    assert_eq!(report.name, "kc_n8_d0.5_k4_s3");
}

#[test]
fn gen_to_stdout_is_canonical() {
    let text = ok(&["gen", "--family", "eiqp", "--n", "3", "--clip", "3", "--seed", "1"]);
    let inst = miqcr::instances::parse_instance(&text).unwrap();
    assert_eq!(miqcr::instances::to_canonical_json(&inst).trim_end(), text.trim_end());
}

#[test]
fn solve_writes_report_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let logs = dir.path().join("logs");
    ok(&[
        "solve", "--n", "10", "--k", "5", "--seed", "2", "--delta", "0.5", "--mode", "binary", "--out", path_str(&out), "--log-dir",
        path_str(&logs),
    ]);
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.p, 90);
    assert_eq!(report.tol, 1e-4);
    assert_eq!(std::fs::read_dir(&logs).unwrap().count(), 2);
}

#[test]
fn tolerance_flags_override_the_mode() {
    let report: RunReport = serde_json::from_str(&ok(&[
        "solve", "--n", "8", "--k", "3", "--mode", "integer", "--tol", "1e-6", "--zero-tol", "1e-5", "--delta", "0.2",
    ]))
    .unwrap();
    assert_eq!((report.tol, report.zero_tol), (1e-6, 1e-5));
    assert_eq!(report.mode, miqcr::Mode::Integer);
}

#[test]
fn node_limit_flag() {
    let report: RunReport = serde_json::from_str(&ok(&["solve", "--n", "10", "--k", "5", "--delta", "0", "--node-limit", "0"])).unwrap();
    assert_eq!(report.status, RunStatus::TimeLimit);
    assert_eq!(report.nodes, 0);
}

#[test]
fn phase1_dumps_the_dual() {
    let dual: DualSolution = serde_json::from_str(&ok(&["phase1", "--n", "8", "--k", "4", "--delta", "0"])).unwrap();
    assert_eq!(dual.oracle_calls, 1);
    assert!(dual.beta.is_empty());
    assert_eq!(dual.lambda.len(), 8);
}

#[test]
fn batch_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let configs: Vec<RunConfig> = (0..3)
        .map(|s| RunConfig::new(miqcr::InstanceSpec::Kcluster { n: 8, d: 0.5, k: 4, seed: s }, 1.0))
        .collect();
    let path = dir.path().join("batch.json");
    std::fs::write(&path, serde_json::to_string(&configs).unwrap()).unwrap();
    let outcome: BatchOutcome = serde_json::from_str(&ok(&["batch", path_str(&path)])).unwrap();
    assert_eq!(outcome.reports.len(), 3);
    assert_eq!(outcome.summary.len(), 1);
    assert_eq!(outcome.summary[0].solved, 3);
}

#[test]
fn errors_exit_nonzero() {
    let out = miqcr(&["solve", "--instance", "/nonexistent.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = miqcr(&["solve", "--n", "4", "--k", "2"]);
    assert!(!out.status.success());
}
