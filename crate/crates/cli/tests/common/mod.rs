#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use ctxpipe::api::{router, AppState};
use ctxpipe::cli::{run_with, Io};
use ctxpipe_core::workspace::Workspace;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli(ws: &Path, args: &[&str]) -> CliOutput {
    cli_with_input(ws, args, None)
}

pub fn cli_with_input(ws: &Path, args: &[&str], input: Option<&str>) -> CliOutput {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut reader = input.map(|s| std::io::Cursor::new(s.as_bytes().to_vec()));
    let mut full = vec!["ctxpipe".to_string(), "--workspace".into(), ws.display().to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    let code = run_with(
        full,
        Io {
            out: &mut out,
            err: &mut err,
            input: reader.as_mut().map(|r| r as &mut dyn std::io::BufRead),
        },
    );
    CliOutput {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn app(ws: &Path, token: Option<&str>) -> Router {
    router(AppState::new(Workspace::open(ws).unwrap(), token.map(str::to_string)))
}

pub struct HttpResponse {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub text: String,
}

impl HttpResponse {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text))
    }
}

pub async fn call(app: &Router, method: &str, path: &str, body: Option<Value>) -> HttpResponse {
    call_auth(app, method, path, body, None).await
}

pub async fn call_auth(app: &Router, method: &str, path: &str, body: Option<Value>, token: Option<&str>) -> HttpResponse {
    let mut req = Request::builder().method(method).uri(path);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    HttpResponse {
        status,
        headers,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub fn manifest(package_id: &str, pipeline_id: &str, stage: &str) -> Value {
    serde_json::json!({
        "package_id": package_id,
        "pipeline_id": pipeline_id,
        "stage": stage,
        "elements": [
            {"element_id": "E1", "role": "authority", "source_kind": "file", "label": "Design document",
             "content_ref": "design.md", "token_estimate": 900, "tags": ["design_authority"], "reviewed": true},
            {"element_id": "E2", "role": "constraint", "source_kind": "verbal", "label": "Word limit",
             "content_ref": "operator", "token_estimate": 50},
            {"element_id": "E3", "role": "exemplar", "source_kind": "file", "label": "Earlier report",
             "content_ref": "old.md", "token_estimate": 400, "reviewed": true}
        ]
    })
}

/// Copy a directory tree, used to fork identical workspace snapshots.
pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}
