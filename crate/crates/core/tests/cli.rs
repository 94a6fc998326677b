//! End-to-end tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_o2o-select"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_series_csv(path: &Path) {
    let mut body = String::from("iteration,value\n");
    for (i, v) in [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.62, 0.71, 0.78, 0.8]
        .iter()
        .enumerate()
    {
        body.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(path, body).unwrap();
}

const CONFIG: &str = r#"{
    "envs": [{"name": "suite", "synthetic": {
        "suite_seed": 5, "curve_length": 12,
        "families": [
            {"count": 2, "family": "RISE_THEN_COLLAPSE",
             "start": 0.63, "peak": 0.67, "peak_index": 1, "end": -0.5},
            {"count": 6, "family": "LOGISTIC_IMPROVE",
             "floor": 0.57, "ceiling": 0.92, "rate": 1.2, "midpoint": 3.5}
        ],
        "eval_noise_std": 0.01, "ope_noise_std": 0.03,
        "random_policy_value": 0.0, "behavior_value": 0.58
    }}],
    "budgets": [160000],
    "seeds": [0, 1]
}"#;

#[test]
fn fit_prints_params_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    write_series_csv(&csv);
    let out = run_ok(bin().args(["fit", "--input"]).arg(&csv));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["beta0", "beta1", "beta2", "alpha0", "alpha1", "fallback_used"] {
        assert!(parsed.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn forecast_prints_result_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    write_series_csv(&csv);
    let out = run_ok(
        bin()
            .args(["forecast", "--input"])
            .arg(&csv)
            .args(["--horizon", "4", "--paths", "200", "--quantile", "0.95", "--seed", "3"]),
    );
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["horizon"].as_array().unwrap().len(), 4);
    assert_eq!(parsed["ucb_per_step"].as_array().unwrap().len(), 4);
    assert!(parsed["max_ucb"].as_f64().unwrap().is_finite());
}

#[test]
fn simulate_emits_trace_csv() {
    let out = run_ok(bin().args([
        "simulate",
        "--family",
        "PLATEAU",
        "--length",
        "6",
        "--level",
        "0.5",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "policy_id,iteration,value");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[1], "0,0,0.5");
}

#[test]
fn simulate_unknown_family_exits_1() {
    let out = bin()
        .args(["simulate", "--family", "NOPE", "--length", "6"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_writes_report_and_histories() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let report = dir.path().join("report.md");
    let history = dir.path().join("history.jsonl");
    run_ok(
        bin()
            .args(["compare", "--config"])
            .arg(&config)
            .args(["--format", "markdown", "--out"])
            .arg(&report)
            .arg("--history-out")
            .arg(&history),
    );
    let md = std::fs::read_to_string(&report).unwrap();
    assert!(md.contains("## suite"));
    assert!(md.contains("## Overall Average"));
    let hist = std::fs::read_to_string(&history).unwrap();
    // 2 seeds x 8 iterations of the selector.
    assert_eq!(hist.lines().count(), 16);
    for line in hist.lines() {
        let parsed: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(parsed["policy_id"].is_u64());
        assert!(parsed["consumed_transitions"].is_u64());
    }
}

#[test]
fn compare_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let render = || {
        let out = run_ok(
            bin()
                .args(["compare", "--config"])
                .arg(&config)
                .args(["--format", "json"]),
        );
        out.stdout
    };
    assert_eq!(render(), render());
}

#[test]
fn oracle_prints_per_env_lines() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let out = run_ok(bin().args(["oracle", "--config"]).arg(&config));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let parsed: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(parsed["env"], "suite");
    assert_eq!(parsed["budget"], 160000);
    assert!(parsed["best_value"].as_f64().unwrap() > 0.8);
}

#[test]
fn invalid_config_exits_1_with_violations() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"envs": [], "budgets": [], "seeds": []}"#).unwrap();
    let out = bin()
        .args(["compare", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seeds must be non-empty"), "{stderr}");
}

#[test]
fn fit_on_short_series_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    std::fs::write(&csv, "iteration,value\n0,1.0\n1,2.0\n").unwrap();
    let out = bin().args(["fit", "--input"]).arg(&csv).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
