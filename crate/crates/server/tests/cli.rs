use std::process::Command;

use mediator_core::scenario::Scenario;
use serde_json::Value;

fn mediator() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mediator"))
}

fn write_reference(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, mediator_core::scenario::REFERENCE_SCENARIO).unwrap();
    path
}

#[test]
fn replay_reference_exits_zero_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_reference(dir.path());
    let out = dir.path().join("report.json");
    let status = mediator()
        .args(["replay", "--scenario"])
        .arg(&scenario)
        .arg("--data-dir")
        .arg(dir.path().join("data"))
        .args(["--crash-after", "20", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["ok"], true);
    assert_eq!(report["restarted_after"], 20);
    let ginis: Vec<f64> = report["meetings"].as_array().unwrap().iter().map(|m| m["gini"].as_f64().unwrap()).collect();
    assert_eq!(ginis.len(), 2);
    assert!(ginis[1] > ginis[0]);
}

#[test]
fn replay_schema_violation_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value = serde_json::from_str(mediator_core::scenario::REFERENCE_SCENARIO).unwrap();
    doc["meetings"][1]["events"][2]["ts_ms"] = Value::String("late".into());
    let path = dir.path().join("bad.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = mediator().args(["replay", "--scenario"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("meetings[1].events[2].ts_ms"), "{err}");
    assert!(err.contains("bad.json"), "{err}");
}

#[test]
fn replay_stall_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = Scenario::reference();
    sc.mock_script.entries.retain(|e| !serde_json::to_string(e).unwrap().contains("PROPOSE_GOAL"));
    let path = dir.path().join("stall.json");
    std::fs::write(&path, serde_json::to_string(&sc).unwrap()).unwrap();
    let out = mediator().args(["replay", "--scenario"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("protocol stall"));
}

#[test]
fn metrics_from_replay_data_dir_and_csv_export() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_reference(dir.path());
    let data = dir.path().join("data");
    let status = mediator()
        .args(["replay", "--scenario"])
        .arg(&scenario)
        .arg("--data-dir")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .status()
        .unwrap();
    assert!(status.success());

    let csv = dir.path().join("csv");
    let out = mediator()
        .args(["metrics", "--alternative", "greater", "--fdr", "--data-dir"])
        .arg(&data)
        .arg("--export-csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["fdr_applied"], true);
    assert_eq!(report["comparison"]["pairs"].as_array().unwrap().len(), 1);
    for f in ["gini_pairs.csv", "deviations.csv", "tests.csv"] {
        assert!(csv.join(f).exists(), "{f}");
    }

    // The same stats through --input give the same report.
    let state_stats: Vec<Value> = {
        let (_, state, _) = mediator_core::store::EventLog::open(&data, u64::MAX).unwrap();
        state.meetings.values().filter_map(|m| m.stats.as_ref()).map(|s| serde_json::to_value(s).unwrap()).collect()
    };
    let input = dir.path().join("stats.json");
    std::fs::write(&input, Value::Array(state_stats).to_string()).unwrap();
    let again = mediator()
        .args(["metrics", "--alternative", "greater", "--fdr", "--input"])
        .arg(&input)
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(serde_json::from_slice::<Value>(&again.stdout).unwrap(), report);
}

#[test]
fn metrics_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("stats.json");
    std::fs::write(&input, r#"{"meetings": 3}"#).unwrap();
    let out = mediator().args(["metrics", "--input"]).arg(&input).output().unwrap();
    assert!(!out.status.success());
    let out = mediator().args(["metrics"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn serve_aborts_on_missing_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mediator.toml");
    std::fs::write(&cfg, "bind = \"127.0.0.1:0\"\nprovider = \"mock\"\n").unwrap();
    let out = mediator()
        .args(["serve", "--config"])
        .arg(&cfg)
        .env_remove("MEDIATOR_AUTH_TOKEN")
        .env_remove("MEDIATOR_DATA_DIR")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("auth_token"));
}
