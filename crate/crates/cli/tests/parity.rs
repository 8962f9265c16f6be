//! The CLI and the HTTP API share one operation layer. Running the same
//! sequence of mutations through each, starting from identical workspace
//! snapshots, must leave byte-identical state files and trails that differ
//! only in timestamps and digests.

mod common;

use std::fs;
use std::path::Path;

use common::{call, cli, copy_tree, manifest};
use ctxpipe_core::trail::parse_trail;
use serde_json::{json, Value};

const ID: &str = "P-REPORT-PAPER";

struct Step {
    cli: Vec<String>,
    method: &'static str,
    path: String,
    body: Option<Value>,
}

fn step(cli: &[&str], method: &'static str, path: &str, body: Option<Value>) -> Step {
    Step {
        cli: cli.iter().map(|s| s.to_string()).collect(),
        method,
        path: path.to_string(),
        body,
    }
}

fn scenario(manifest_dir: &Path) -> Vec<Step> {
    let mut steps = Vec::new();
    for stage in ["Reviewer", "Design", "Builder", "Auditor"] {
        let m = manifest(&format!("PK-{stage}"), ID, stage);
        let file = manifest_dir.join(format!("{stage}.json"));
        fs::write(&file, m.to_string()).unwrap();
        steps.push(Step {
            cli: vec!["package".into(), "add".into(), file.display().to_string()],
            method: "POST",
            path: "/api/v1/packages".into(),
            body: Some(m),
        });
    }
    let begin = |stage: &str, tool: &str, pkg: &str| {
        step(
            &["stage", "begin", ID, "--stage", stage, "--tool", tool, "--package", pkg],
            "POST",
            &format!("/api/v1/pipelines/{ID}/stages"),
            Some(json!({"stage": stage, "tool": tool, "package_id": pkg})),
        )
    };
    let complete = |record: &str, artifact: &str| {
        step(
            &["stage", "complete", ID, "--record", record, "--artifact", artifact],
            "POST",
            &format!("/api/v1/pipelines/{ID}/stages/{record}/complete"),
            Some(json!({"output_artifact": artifact})),
        )
    };
    steps.push(begin("Reviewer", "ChatGPT", "PK-Reviewer"));
    steps.push(complete("R-1", "review.md"));
    steps.push(begin("Design", "Claude", "PK-Design"));
    steps.push(complete("R-2", "design.md"));
    steps.push(begin("Builder", "Claude", "PK-Builder"));
    steps.push(complete("R-3", "draft.md"));
    steps.push(begin("Auditor", "ChatGPT", "PK-Auditor"));
    steps.push(step(
        &[
            "finding", "record", ID, "--severity", "major", "--category", "structural", "--description",
            "Sections out of order",
        ],
        "POST",
        &format!("/api/v1/pipelines/{ID}/findings"),
        Some(json!({"severity": "major", "category": "structural", "description": "Sections out of order"})),
    ));
    steps.push(complete("R-5", "design-v2.md"));
    steps.push(begin("Builder", "Claude", "PK-Builder"));
    steps.push(complete("R-6", "draft-v2.md"));
    steps.push(complete("R-4", "audit.md"));
    steps.push(step(
        &["pipeline", "close", ID, "--yes"],
        "POST",
        &format!("/api/v1/pipelines/{ID}/close"),
        Some(json!({"confirm": true})),
    ));
    steps
}

fn normalized_trail(ws: &Path) -> Vec<Value> {
    let bytes = fs::read(ws.join("pipelines").join(ID).join("trail.log")).unwrap();
    parse_trail(&bytes)
        .unwrap()
        .into_iter()
        .map(|e| json!({"seq": e.seq, "kind": e.kind, "payload": e.payload}))
        .collect()
}

#[tokio::test]
async fn cli_and_http_produce_identical_state() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base");
    fs::create_dir_all(&base).unwrap();
    assert_eq!(cli(&base, &["init"]).code, 0);
    let created = cli(&base, &["pipeline", "create", "--project", "REPORT", "--domain", "PAPER", "--scale", "task"]);
    assert_eq!(created.code, 0, "{}", created.stderr);
    assert_eq!(created.stdout.trim(), ID);

    let via_cli = tmp.path().join("cli");
    let via_http = tmp.path().join("http");
    copy_tree(&base, &via_cli);
    copy_tree(&base, &via_http);
    let manifests = tmp.path().join("manifests");
    fs::create_dir_all(&manifests).unwrap();

    let app = common::app(&via_http, None);
    for (i, s) in scenario(&manifests).into_iter().enumerate() {
        let args: Vec<&str> = s.cli.iter().map(String::as_str).collect();
        let c = cli(&via_cli, &args);
        assert_eq!(c.code, 0, "step {i} cli failed: {}", c.stderr);
        let h = call(&app, s.method, &s.path, s.body).await;
        assert!(h.status.is_success(), "step {i} http failed: {} {}", h.status, h.text);
    }

    let state = |ws: &Path| fs::read(ws.join("pipelines").join(ID).join("state")).unwrap();
    assert_eq!(state(&via_cli), state(&via_http), "state files differ");
    let trail = normalized_trail(&via_cli);
    assert_eq!(trail, normalized_trail(&via_http));
    assert!(trail.len() >= 18, "expected a full trail, got {}", trail.len());
    assert_eq!(trail.last().unwrap()["kind"], "PipelineClosed");

    for ws in [&via_cli, &via_http] {
        let v = cli(ws, &["trail", "verify", ID]);
        assert_eq!(v.code, 0, "{}", v.stdout);
        assert!(v.stdout.starts_with("OK:"));
    }
}

#[tokio::test]
async fn structured_cli_output_matches_http_body() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path();
    cli(ws, &["init"]);
    let app = common::app(ws, None);

    let c = cli(ws, &["--format", "structured", "estimate", "nversion", "--p", "0.55,0.55"]);
    assert_eq!(c.code, 0);
    let h = call(&app, "POST", "/api/v1/estimators/nversion", Some(json!({"p": [0.55, 0.55]}))).await;
    assert_eq!(serde_json::from_str::<Value>(&c.stdout).unwrap(), h.json());

    let c = cli(ws, &["--format", "structured", "template", "list"]);
    let h = call(&app, "GET", "/api/v1/templates", None).await;
    assert_eq!(serde_json::from_str::<Value>(&c.stdout).unwrap(), h.json());
}
