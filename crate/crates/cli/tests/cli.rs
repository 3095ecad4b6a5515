use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use didchain_core::trace::TraceReport;
use serde_json::Value;

fn dairy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../examples/dairy.json")
}

fn didchain(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_didchain"))
        .arg("--data-dir")
        .arg(dir)
        .args(["--clock-start", "2024-03-05T09:00:00Z"])
        .args(args)
        .env_remove("DIDCHAIN_CONFIG")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn scenario_then_cost_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = json(&didchain(dir.path(), &["--format", "json", "run-scenario", dairy().to_str().unwrap()]));
    assert_eq!(run["events"], 15);
    assert_eq!(run["fees_ct"], 500);

    let cost = json(&didchain(dir.path(), &["--format", "json", "cost-report"]));
    assert_eq!(cost["total_ct"], 500);
    let dairy = cost["reports"].as_array().unwrap().iter().find(|r| r["stakeholder"] == "dairy").unwrap();
    assert_eq!(dairy["total_ct"], 175);

    let predicted = json(&didchain(
        dir.path(),
        &["--format", "json", "cost-report", "--script", self::dairy().to_str().unwrap()],
    ));
    let strip = |v: &Value| -> Vec<Value> {
        v["reports"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| serde_json::json!([r["stakeholder"], r["creates"], r["updates"], r["deactivates"], r["total_ct"]]))
            .collect()
    };
    assert_eq!(strip(&predicted), strip(&cost));

    let out = didchain(dir.path(), &["verify-store"]);
    assert!(out.status.success());
}

#[test]
fn trace_json_is_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = json(&didchain(dir.path(), &["--format", "json", "run-scenario", dairy().to_str().unwrap()]));
    let cheese = run["assets"]["cheese"].as_str().unwrap();
    let out = didchain(dir.path(), &["--format", "json", "trace", cheese]);
    let report: TraceReport = serde_json::from_value(json(&out)).unwrap();
    assert!(report.verified);
    assert_eq!(report.events.len(), 15);
    assert_eq!(report.resolution_count, 31);

    let versions = json(&didchain(dir.path(), &["--format", "json", "versions", cheese]));
    assert_eq!(versions["versions"].as_array().unwrap().len(), 7);
    let v1 = json(&didchain(dir.path(), &["--format", "json", "resolve", cheese, "--version", "1"]));
    assert_eq!(v1["didDocumentMetadata"]["version"], 1);
}

#[test]
fn event_commands_and_compat_limit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (alias, role) in [("farm", "producer"), ("dairy", "manufacturer")] {
        let out = didchain(d, &["actor", "create", alias, "--role", role, "--balance", "100000"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut assets = Vec::new();
    for _ in 0..3 {
        let made = json(&didchain(d, &["--format", "json", "produce", "--actor", "farm", "--attr", "kind=milk"]));
        let did = made["asset"].as_str().unwrap().to_string();
        assert!(didchain(d, &["ship", "--actor", "farm", "--asset", &did, "--to", "dairy"]).status.success());
        assert!(didchain(d, &["receive", "--actor", "dairy", "--asset", &did]).status.success());
        assets.push(did);
    }

    let out = didchain(d, &["--compat-limit", "2", "manufacture", "--actor", "dairy", "--compartments", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("CompartmentLimitExceeded"));
    let out = didchain(
        d,
        &["--compat-limit", "2", "manufacture", "--actor", "dairy", "--compartments", &assets.join(",")],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("CompartmentLimitExceeded"));

    // The override does not persist.
    let made = json(&didchain(d, &["--format", "json", "manufacture", "--actor", "dairy", "--compartments", "3"]));
    assert_eq!(made["compartments"].as_array().unwrap().len(), 3);

    let out = didchain(d, &["receive", "--actor", "dairy", "--asset", &assets[0]]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("WrongState"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(didchain(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(didchain(dir.path(), &["trace", "not-a-did"]).status.code(), Some(2));
    assert_eq!(didchain(dir.path(), &["cost-report", "--price", "x"]).status.code(), Some(2));
}

#[test]
fn runs_are_reproducible() {
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = didchain(dir.path(), &["--format", "json", "run-scenario", dairy().to_str().unwrap()]);
            assert!(out.status.success());
            out.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_didchain"))
        .args(["bench", "sweep", "--max-n", "6", "--out"])
        .arg(&out_dir)
        .args(["--compat-limit", "4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max accepted: 4"), "{text}");
    assert!(text.contains("CompartmentLimitExceeded"), "{text}");
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("scenario_id,"));
}
