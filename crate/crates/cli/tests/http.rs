mod common;

use axum::http::StatusCode;
use common::{call, call_auth, cli, manifest};
use ctxpipe_core::workspace::Workspace;
use ctxpipe_core::PipelineId;
use serde_json::json;

const ID: &str = "P-REPORT-PAPER";

async fn seeded() -> (tempfile::TempDir, axum::Router) {
    let tmp = tempfile::tempdir().unwrap();
    cli(tmp.path(), &["init"]);
    let app = common::app(tmp.path(), None);
    let r = call(
        &app,
        "POST",
        "/api/v1/pipelines",
        Some(json!({"project": "REPORT", "domain": "PAPER", "scale": "task"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    assert_eq!(r.json()["pipeline_id"], ID);
    for stage in ["Reviewer", "Design", "Builder", "Auditor"] {
        let r = call(&app, "POST", "/api/v1/packages", Some(manifest(&format!("PK-{stage}"), ID, stage))).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    }
    (tmp, app)
}

async fn begin(app: &axum::Router, stage: &str, tool: &str) -> common::HttpResponse {
    call(
        app,
        "POST",
        &format!("/api/v1/pipelines/{ID}/stages"),
        Some(json!({"stage": stage, "tool": tool, "package_id": format!("PK-{stage}")})),
    )
    .await
}

async fn complete(app: &axum::Router, record: &str) {
    let r = call(
        app,
        "POST",
        &format!("/api/v1/pipelines/{ID}/stages/{record}/complete"),
        Some(json!({"output_artifact": format!("{record}.md")})),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
}

async fn through_builder(app: &axum::Router) {
    for (i, (stage, tool)) in [("Reviewer", "ChatGPT"), ("Design", "Claude"), ("Builder", "Claude")]
        .into_iter()
        .enumerate()
    {
        let r = begin(app, stage, tool).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        assert_eq!(r.json()["record_id"], format!("R-{}", i + 1));
        complete(app, &format!("R-{}", i + 1)).await;
    }
}

#[tokio::test]
async fn same_tool_auditor_is_a_409_rule_violation() {
    let (_tmp, app) = seeded().await;
    through_builder(&app).await;
    let r = begin(&app, "Auditor", "CLAUDE").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let body = r.json();
    assert_eq!(body["code"], "RULE6_VIOLATION");
    assert_eq!(body["rule"], "Rule 6");
    assert!(body["message"].as_str().unwrap().contains("The executor cannot be the auditor"));
}

#[tokio::test]
async fn structural_finding_routes_to_design() {
    let (_tmp, app) = seeded().await;
    through_builder(&app).await;
    assert_eq!(begin(&app, "Auditor", "ChatGPT").await.status, StatusCode::CREATED);
    let r = call(
        &app,
        "POST",
        &format!("/api/v1/pipelines/{ID}/findings"),
        Some(json!({"severity": "major", "category": "structural", "description": "Wrong outline"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let body = r.json();
    assert_eq!(body["target_stage"], "Design");
    assert_eq!(body["finding_id"], "F-1");
    assert_eq!(body["events"].as_array().unwrap().len(), 2);

    let view = call(&app, "GET", &format!("/api/v1/pipelines/{ID}"), None).await.json();
    assert_eq!(view["pipeline"]["findings"][0]["routed_record_id"], body["record_id"]);

    let preview = call(&app, "GET", "/api/v1/routing?category=missing_context", None).await;
    assert_eq!(preview.json()["target_stage"], "Reviewer");
}

#[tokio::test]
async fn rule_one_blocks_out_of_order_stage() {
    let (_tmp, app) = seeded().await;
    let r = begin(&app, "Builder", "Claude").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "RULE1_VIOLATION");
}

#[tokio::test]
async fn skip_returns_failure_mode_warning() {
    let (_tmp, app) = seeded().await;
    let r = call(
        &app,
        "POST",
        &format!("/api/v1/pipelines/{ID}/stages/skip"),
        Some(json!({"stage": "Reviewer", "reason": "small task"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    let notices = r.json()["notices"].to_string();
    assert!(notices.contains("generic or misaligned"), "{notices}");
}

#[tokio::test]
async fn locked_pipeline_is_423_with_retry_after() {
    let (tmp, app) = seeded().await;
    let ws = Workspace::open(tmp.path()).unwrap();
    let _held = ws.lock(&ID.parse::<PipelineId>().unwrap()).unwrap();
    let r = begin(&app, "Reviewer", "ChatGPT").await;
    assert_eq!(r.status, StatusCode::LOCKED);
    assert_eq!(r.json()["code"], "BUSY");
    assert!(r.headers.contains_key("retry-after"));
    drop(_held);
    assert_eq!(begin(&app, "Reviewer", "ChatGPT").await.status, StatusCode::CREATED);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    cli(tmp.path(), &["init"]);
    let app = common::app(tmp.path(), Some("s3cret"));
    assert_eq!(call(&app, "GET", "/api/v1/pipelines", None).await.status, StatusCode::UNAUTHORIZED);
    let wrong = call_auth(&app, "GET", "/api/v1/pipelines", None, Some("nope")).await;
    assert_eq!(wrong.status, StatusCode::UNAUTHORIZED);
    assert_eq!(wrong.json()["code"], "UNAUTHORIZED");
    let ok = call_auth(&app, "GET", "/api/v1/pipelines", None, Some("s3cret")).await;
    assert_eq!(ok.status, StatusCode::OK);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let (_tmp, app) = seeded().await;
    let r = call(&app, "GET", "/api/v1/pipelines/P-NOPE-NOPE", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["code"], "UNKNOWN_PIPELINE");

    let r = call(&app, "GET", "/api/v1/pipelines/not-an-id", None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = call(
        &app,
        "POST",
        "/api/v1/pipelines",
        Some(json!({"project": "REPORT", "domain": "PAPER", "scale": "task"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["code"], "PIPELINE_EXISTS");

    let r = call(&app, "GET", "/api/v1/nowhere", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn package_endpoints() {
    let (_tmp, app) = seeded().await;
    let r = call(
        &app,
        "POST",
        "/api/v1/packages/resolve",
        Some(json!({"pipeline_id": ID, "package_id": "PK-Design", "a": "E3", "b": "E1"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    assert_eq!(r.json()["winner"], "E1");

    let r = call(&app, "POST", "/api/v1/packages/classify", Some(json!({"tokens": 2001}))).await;
    assert_eq!(r.json()["size_class"], "Comprehensive");

    let r = call(&app, "POST", "/api/v1/packages/validate", Some(manifest("PK-X", ID, "Builder"))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["total_tokens"], 1350);
}

#[tokio::test]
async fn template_and_estimator_endpoints() {
    let (_tmp, app) = seeded().await;
    let r = call(&app, "GET", "/api/v1/templates/academic-paper/design", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.headers["content-type"].to_str().unwrap().starts_with("text/markdown"));
    assert!(r.text.contains("## PURPOSE"));

    let r = call(
        &app,
        "POST",
        "/api/v1/templates/instantiate",
        Some(json!({"type_name": "code-build", "project": "API", "domain": "AUTH", "date": "2026-03-01"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let text = r.json()["templates"][0]["text"].as_str().unwrap().to_string();
    assert!(text.contains("P-API-AUTH"));

    let r = call(&app, "POST", "/api/v1/estimators/chapman", Some(json!({"n1": 0, "n2": 12, "m": 0}))).await;
    assert_eq!(r.json()["value"], 12.0);
    let r = call(&app, "POST", "/api/v1/estimators/lp", Some(json!({"n1": 3, "n2": 4, "m": 0}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}
