//! End-to-end checks of the `lnirt` binary on tiny problems.

use std::path::Path;
use std::process::Command;

fn lnirt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lnirt"))
}

#[test]
fn simulate_fit_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let status = lnirt()
        .args([
            "simulate",
            "--output",
            out.to_str().unwrap(),
            "--n-persons",
            "40",
            "--seed",
            "31",
            "--missing-rate",
            "0.1",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["responses.csv", "rts.csv", "qmatrix.csv", "truth.json"] {
        assert!(out.join(file).exists(), "missing {file}");
    }

    // The simulate default design has 20 items; fit with short chains.
    let status = lnirt()
        .args([
            "fit",
            "--output",
            out.to_str().unwrap(),
            "--responses",
            out.join("responses.csv").to_str().unwrap(),
            "--rts",
            out.join("rts.csv").to_str().unwrap(),
            "--qmatrix",
            out.join("qmatrix.csv").to_str().unwrap(),
            "--iterations",
            "200",
            "--burnin",
            "100",
            "--seed",
            "32",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for file in [
        "summary.json",
        "convergence.csv",
        "draws_chain1.csv",
        "draws_chain2.csv",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["structure"], "MA_MS");
    assert!(summary["meta"]["config_hash"].is_string());
    assert!(summary["criteria"]["dic"].is_number());

    let status = lnirt()
        .args([
            "compare",
            "--output",
            out.to_str().unwrap(),
            "--responses",
            out.join("responses.csv").to_str().unwrap(),
            "--rts",
            out.join("rts.csv").to_str().unwrap(),
            "--qmatrix",
            out.join("qmatrix.csv").to_str().unwrap(),
            "--iterations",
            "200",
            "--burnin",
            "100",
            "--seed",
            "33",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    assert_eq!(
        lines.next().unwrap(),
        "structure,AIC,BIC,DIC,ppp_RA,ppp_RT"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("MA_MS,"));
    assert!(rows[1].starts_with("MA_US,"));
    assert!(rows[2].starts_with("UA_US,"));
}

#[test]
fn invalid_sampler_config_fails_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let output = lnirt()
        .args([
            "fit",
            "--output",
            dir.path().to_str().unwrap(),
            "--iterations",
            "100",
            "--burnin",
            "100",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("n_burnin"), "stderr: {stderr}");
}

#[test]
fn missing_input_files_fail_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let output = lnirt()
        .args(["fit", "--output", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("responses"), "stderr: {stderr}");
}

#[test]
fn recover_command_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = serde_json::json!({
        "design": { "n_persons": 50, "n_items": 8, "n_dims": 2 },
        "sampler": { "n_iterations": 1500, "n_burnin": 750 },
        "replications": 2,
        "base_seed": 11,
    });
    let config_path = out.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let status = lnirt()
        .args([
            "recover",
            "--config",
            config_path.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("recovery.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("recovery.json")).unwrap()).unwrap();
    assert_eq!(report["n_replications"], 2);
    assert!(report["families"].as_array().unwrap().len() >= 9);
}

#[test]
fn shipped_pisa_qmatrix_loads_through_cli_path() {
    // The fixture file itself parses through the public loader.
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pisa2012_qmatrix.csv");
    let q = lnirt::io::load_qmatrix(&fixture).unwrap();
    assert_eq!(q.n_items(), 10);
    assert_eq!(q.n_dims(), 4);
}
