mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn mediate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mediate")).current_dir(dir).env_remove("MEDIATE_PROJECT").args(args).output().unwrap()
}

fn ok_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn full_pipeline_completes_a_run() {
    let d = common::scenario();
    let reports = ok_json(&mediate(d.path(), &["pipeline", "--run", "r1", "--input", "input.json"]));
    let stages: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["model", "deduce", "match", "reconcile", "compile", "run"]);
    assert_eq!(reports[5]["summary"]["status"], "completed");
}

#[test]
fn project_flag_and_env_select_the_project() {
    let d = common::scenario();
    let elsewhere = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mediate")).current_dir(elsewhere.path()).env("MEDIATE_PROJECT", d.path()).arg("validate").output().unwrap();
    assert_eq!(ok_json(&o)["findings"], serde_json::json!([]));
    let cfg = d.path().join("mediate.toml");
    let o = mediate(elsewhere.path(), &["--project", cfg.to_str().unwrap(), "link"]);
    assert_eq!(ok_json(&o)["stage"], "model");
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let d = common::scenario();
    assert_eq!(mediate(d.path(), &["deduce"]).status.code(), Some(3));
    assert_eq!(mediate(d.path(), &["--set", "matching.alpha=1.5", "validate"]).status.code(), Some(2));
    assert_eq!(mediate(d.path(), &["--set", "matching.nonsense=1", "validate"]).status.code(), Some(2));
    std::fs::write(d.path().join("model.toml"), "schema_version = 1\nnetwork_id = \"x\"\n").unwrap();
    assert_eq!(mediate(d.path(), &["validate"]).status.code(), Some(10));
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(mediate(empty.path(), &["validate"]).status.code(), Some(4));
}

#[test]
fn missing_start_field_exits_with_run_code() {
    let d = common::scenario();
    ok_json(&mediate(d.path(), &["pipeline"]));
    std::fs::write(d.path().join("bad.json"), "{}").unwrap();
    let o = mediate(d.path(), &["run", "r", "--input", "bad.json"]);
    assert_eq!(o.status.code(), Some(15));
    assert!(String::from_utf8_lossy(&o.stderr).contains("quantity"));
}

#[test]
fn overrides_change_the_outcome() {
    let d = common::scenario();
    ok_json(&mediate(d.path(), &["pipeline", "--stages", "model,deduce,match"]));
    let alternatives = |d: &Path| {
        let m: Value = serde_json::from_str(&common::read(d, "matches.json")).unwrap();
        m.as_array().unwrap().iter().map(|r| r["candidates"].as_array().unwrap().len()).max().unwrap()
    };
    assert!(alternatives(d.path()) > 1);
    ok_json(&mediate(d.path(), &["--set", "matching.max_candidates=1", "match"]));
    assert_eq!(alternatives(d.path()), 1);
}

#[test]
fn fault_scenario_through_the_cli() {
    let d = common::scenario();
    ok_json(&mediate(d.path(), &["pipeline"]));
    let run = ok_json(&mediate(d.path(), &["run", "r1", "--input", "input.json", "--fault", "svc-transport-fast"]));
    assert_eq!(run["summary"]["status"], "faulted");

    let o = mediate(d.path(), &["monitor", "--events", "events/fault.jsonl", "--no-dispatch"]);
    assert!(o.status.success());
    let lines: Vec<Value> = String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[lines.len() - 2]["dominant"], "execution");
    assert_eq!(lines.last().unwrap()["reentry"], "rediscover_services");

    // rediscovery stops for the designer, who answers the prompt
    assert_eq!(mediate(d.path(), &["monitor", "--events", "events/fault.jsonl", "--dispatch"]).status.code(), Some(16));
    let pending = ok_json(&mediate(d.path(), &["pending"]));
    assert_eq!(pending[0]["activity_id"], "transport_goods");
    let mut child = Command::new(env!("CARGO_BIN_EXE_mediate"))
        .current_dir(d.path())
        .args(["match", "--prompt"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("number = accept") && text.contains("svc-transport-rail"), "{text}");
    assert_eq!(ok_json(&mediate(d.path(), &["pending"])), serde_json::json!([]));

    ok_json(&mediate(d.path(), &["compile"]));
    let r2 = ok_json(&mediate(d.path(), &["migrate", "r1", "r2"]));
    assert_eq!(r2["summary"]["status"], "completed");
    let invoked = &r2["summary"]["invocations"];
    assert_eq!(invoked["svc-transport-rail"], 1);
    assert!(invoked.get("svc-transport-fast").is_none() && invoked.get("svc-forecast").is_none(), "{invoked}");
}

#[test]
fn human_task_is_completed_from_the_cli() {
    let d = common::scenario();
    ok_json(&mediate(d.path(), &["pipeline", "--stages", "model,deduce,match"]));
    let pending = ok_json(&mediate(d.path(), &["pending"]));
    assert_eq!(pending, serde_json::json!([]));
    // swap the invoice service for a person
    ok_json(&mediate(d.path(), &["decide", "invoice_customer", "--gui"]));
    ok_json(&mediate(d.path(), &["compile"]));
    let r = ok_json(&mediate(d.path(), &["run", "h1", "--input", "input.json"]));
    assert_eq!(r["summary"]["status"], "paused", "{r}");
    let node = r["summary"]["pending"][0][0].as_str().unwrap().to_string();
    let bad = mediate(d.path(), &["complete-task", "h1", &node, "--payload", "{}"]);
    assert_eq!(bad.status.code(), Some(15));
    let payload = serde_json::json!({"invoice": {"amount": 10}, "amount": 10.0, "invoice_id": "I-1", "due_date": "01/02/2026"}).to_string();
    let done = ok_json(&mediate(d.path(), &["complete-task", "h1", &node, "--payload", &payload]));
    assert_eq!(done["summary"]["status"], "completed", "{done}");
}
