//! Local HTTP service under `/api/v1`.
//!
//! Handlers decode the request, run the shared operation on a blocking
//! thread and encode the result. Errors carry `{code, rule, message}`.

use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctxpipe_core::workspace::Workspace;
use ctxpipe_core::Stage;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::ops::{self, ErrorClass, OpError, OpResult};

#[derive(Clone)]
pub struct AppState {
    ws: Arc<Workspace>,
    token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(ws: Workspace, token: Option<String>) -> Self {
        Self {
            ws: Arc::new(ws),
            token: token.filter(|t| !t.is_empty()).map(Arc::from),
        }
    }
}

pub fn status_for(class: ErrorClass) -> StatusCode {
    match class {
        ErrorClass::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::Rule | ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Busy => StatusCode::LOCKED,
        ErrorClass::Unauthorized => StatusCode::UNAUTHORIZED,
        ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub struct ApiError(OpError);

impl From<OpError> for ApiError {
    fn from(e: OpError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(self.0.class);
        let mut resp = (status, Json(&self.0)).into_response();
        if status == StatusCode::LOCKED {
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
        }
        resp
    }
}

type ApiResult = Result<Response, ApiError>;

/// Run a workspace operation off the async runtime.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Workspace) -> OpResult<T> + Send + 'static,
{
    let ws = state.ws.clone();
    tokio::task::spawn_blocking(move || f(&ws))
        .await
        .map_err(|e| OpError::new(ErrorClass::Internal, "INTERNAL", e.to_string()))?
        .map_err(ApiError)
}

fn ok<T: serde::Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

fn created<T: serde::Serialize>(value: T) -> ApiResult {
    Ok((StatusCode::CREATED, Json(value)).into_response())
}

fn body<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, ApiError> {
    Ok(ops::decode(value)?)
}

fn pid(s: &str) -> Result<ctxpipe_core::PipelineId, ApiError> {
    Ok(ops::parse_pipeline_id(s)?)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError(OpError::new(
                ErrorClass::Unauthorized,
                "UNAUTHORIZED",
                "missing or wrong bearer token",
            ))
            .into_response();
        }
    }
    next.run(req).await
}

async fn fallback() -> ApiError {
    ApiError(OpError::new(ErrorClass::NotFound, "NOT_FOUND", "no such endpoint"))
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/pipelines", get(list_pipelines).post(create_pipeline))
        .route("/pipelines/{id}", get(pipeline_view))
        .route("/pipelines/{id}/close", get(close_preview).post(close_pipeline))
        .route("/pipelines/{id}/branches", post(branch))
        .route("/pipelines/{id}/stages", get(list_records).post(begin_stage))
        .route("/pipelines/{id}/stages/skip", post(skip_stage))
        .route("/pipelines/{id}/stages/{record_id}/complete", post(complete_stage))
        .route("/pipelines/{id}/findings", get(list_findings).post(record_finding))
        .route("/pipelines/{id}/packages/{package_id}", get(get_package))
        .route("/pipelines/{id}/trail", get(trail_events))
        .route("/pipelines/{id}/trail/verify", get(trail_verify))
        .route("/pipelines/{id}/trail/render", get(trail_render))
        .route("/routing", get(route_preview))
        .route("/packages", post(add_package))
        .route("/packages/validate", post(validate_package))
        .route("/packages/resolve", post(resolve))
        .route("/packages/classify", post(classify))
        .route("/templates", get(list_types))
        .route("/templates/validate", post(validate_template))
        .route("/templates/instantiate", post(instantiate))
        .route("/templates/{type_name}", get(get_templates))
        .route("/templates/{type_name}/export", post(export_templates))
        .route("/templates/{type_name}/{stage}", get(get_template))
        .route("/datasets", get(list_datasets).post(import_dataset))
        .route("/datasets/reports", post(dataset_report))
        .route("/estimators", get(|| async { Json(ops::ESTIMATOR_MODELS) }))
        .route("/estimators/{model}", post(estimate))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    Router::new().nest("/api/v1", api)
}

async fn list_pipelines(State(s): State<AppState>) -> ApiResult {
    ok(blocking(&s, ops::list_pipelines).await?)
}

async fn create_pipeline(State(s): State<AppState>, Json(v): Json<Value>) -> ApiResult {
    let req: ops::CreatePipelineRequest = body(v)?;
    created(blocking(&s, move |ws| ops::create_pipeline(ws, &req)).await?)
}

async fn pipeline_view(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    ok(blocking(&s, move |ws| ops::pipeline_view(ws, &id)).await?)
}

async fn close_preview(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    ok(blocking(&s, move |ws| ops::close_preview(ws, &id)).await?)
}

async fn close_pipeline(State(s): State<AppState>, Path(id): Path<String>, body_bytes: axum::body::Bytes) -> ApiResult {
    let id = pid(&id)?;
    let req: ops::CloseRequest = if body_bytes.is_empty() {
        ops::CloseRequest::default()
    } else {
        serde_json::from_slice(&body_bytes).map_err(|e| OpError::invalid("BAD_REQUEST", e.to_string()))?
    };
    ok(blocking(&s, move |ws| ops::close_pipeline(ws, &id, &req)).await?)
}

async fn branch(State(s): State<AppState>, Path(id): Path<String>, Json(v): Json<Value>) -> ApiResult {
    let id = pid(&id)?;
    let req: ops::BranchRequest = body(v)?;
    created(blocking(&s, move |ws| ops::branch(ws, &id, &req)).await?)
}

async fn list_records(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    ok(blocking(&s, move |ws| ops::list_records(ws, &id)).await?)
}

async fn begin_stage(State(s): State<AppState>, Path(id): Path<String>, Json(v): Json<Value>) -> ApiResult {
    let id = pid(&id)?;
    let req: ops::BeginStageRequest = body(v)?;
    created(blocking(&s, move |ws| ops::begin_stage(ws, &id, &req)).await?)
}

async fn complete_stage(
    State(s): State<AppState>,
    Path((id, record_id)): Path<(String, String)>,
    Json(v): Json<Value>,
) -> ApiResult {
    let id = pid(&id)?;
    let req: ops::CompleteStageRequest = body(v)?;
    ok(blocking(&s, move |ws| ops::complete_stage(ws, &id, &record_id, &req)).await?)
}

async fn skip_stage(State(s): State<AppState>, Path(id): Path<String>, Json(v): Json<Value>) -> ApiResult {
    let id = pid(&id)?;
    let req: ops::SkipStageRequest = body(v)?;
    created(blocking(&s, move |ws| ops::skip_stage(ws, &id, &req)).await?)
}

async fn list_findings(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    ok(blocking(&s, move |ws| ops::list_findings(ws, &id)).await?)
}

async fn record_finding(State(s): State<AppState>, Path(id): Path<String>, Json(v): Json<Value>) -> ApiResult {
    let id = pid(&id)?;
    let req: ops::FindingRequest = body(v)?;
    created(blocking(&s, move |ws| ops::record_finding(ws, &id, &req)).await?)
}

#[derive(Deserialize)]
struct RouteQuery {
    category: String,
}

async fn route_preview(Query(q): Query<RouteQuery>) -> ApiResult {
    ok(ops::route_preview(&q.category)?)
}

async fn get_package(State(s): State<AppState>, Path((id, package_id)): Path<(String, String)>) -> ApiResult {
    let id = pid(&id)?;
    let (pkg, report) = blocking(&s, move |ws| ops::get_package(ws, &id, &package_id)).await?;
    ok(json!({"package": pkg, "report": report}))
}

async fn add_package(State(s): State<AppState>, Json(v): Json<Value>) -> ApiResult {
    let pkg = ops::manifest_from_value(v)?;
    created(blocking(&s, move |ws| ops::add_package(ws, pkg)).await?)
}

async fn validate_package(Json(v): Json<Value>) -> ApiResult {
    ok(ops::package_report(&ops::manifest_from_value(v)?))
}

async fn resolve(State(s): State<AppState>, Json(v): Json<Value>) -> ApiResult {
    let req: ops::ResolveRequest = body(v)?;
    ok(blocking(&s, move |ws| ops::resolve(Some(ws), req)).await?)
}

async fn classify(Json(v): Json<Value>) -> ApiResult {
    ok(ops::classify(body(v)?)?)
}

async fn list_types(State(s): State<AppState>) -> ApiResult {
    ok(blocking(&s, ops::list_types).await?)
}

async fn get_templates(State(s): State<AppState>, Path(type_name): Path<String>) -> ApiResult {
    ok(blocking(&s, move |ws| ops::get_templates(ws, &type_name)).await?)
}

async fn get_template(State(s): State<AppState>, Path((type_name, stage)): Path<(String, String)>) -> ApiResult {
    let stage: Stage = stage
        .parse()
        .map_err(|e: ctxpipe_core::error::ParseEnumError| OpError::invalid("BAD_REQUEST", e.to_string()))?;
    let docs = blocking(&s, move |ws| ops::get_templates(ws, &type_name)).await?;
    let doc = docs
        .into_iter()
        .find(|d| d.stage == stage)
        .ok_or_else(|| OpError::new(ErrorClass::NotFound, "UNKNOWN_TEMPLATE", format!("no {stage} template")))?;
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, "text/markdown; charset=utf-8")
        .body(Body::from(doc.text))
        .expect("static headers"))
}

async fn export_templates(State(s): State<AppState>, Path(type_name): Path<String>) -> ApiResult {
    created(blocking(&s, move |ws| ops::export_templates(ws, &type_name)).await?)
}

#[derive(Deserialize)]
struct TemplateText {
    text: String,
}

async fn validate_template(Json(v): Json<Value>) -> ApiResult {
    let req: TemplateText = body(v)?;
    ok(ops::validate_template_text(&req.text)?)
}

async fn instantiate(State(s): State<AppState>, Json(v): Json<Value>) -> ApiResult {
    let req: ops::InstantiateRequest = body(v)?;
    ok(blocking(&s, move |ws| ops::instantiate(ws, &req).map(|(out, _)| out)).await?)
}

async fn list_datasets(State(s): State<AppState>) -> ApiResult {
    ok(blocking(&s, ops::list_datasets).await?)
}

async fn import_dataset(State(s): State<AppState>, Json(v): Json<Value>) -> ApiResult {
    let req: ops::ImportRequest = body(v)?;
    created(blocking(&s, move |ws| ops::import_values(ws, req)).await?)
}

async fn dataset_report(State(s): State<AppState>, Json(v): Json<Value>) -> ApiResult {
    let req: ops::ReportRequest = body(v)?;
    ok(blocking(&s, move |ws| ops::dataset_report(ws, &req)).await?)
}

async fn estimate(Path(model): Path<String>, Json(mut v): Json<Value>) -> ApiResult {
    if let Some(obj) = v.as_object_mut() {
        obj.insert("model".into(), Value::String(model.to_ascii_lowercase()));
    }
    let req: ops::EstimateRequest = body(v)?;
    ok(ops::estimate(&req)?)
}

async fn trail_events(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    ok(blocking(&s, move |ws| ops::trail_events(ws, &id)).await?)
}

async fn trail_verify(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    ok(blocking(&s, move |ws| ops::trail_verify(ws, &id)).await?)
}

async fn trail_render(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let id = pid(&id)?;
    let text = blocking(&s, move |ws| ops::trail_render(ws, &id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

/// Bind and serve until interrupted. Holds the workspace server lock.
pub async fn serve(ws: Workspace, bind: &str, token: Option<String>) -> Result<(), OpError> {
    let _lock = ws.lock_server()?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| OpError::new(ErrorClass::Internal, "BIND_FAILED", format!("{bind}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| OpError::new(ErrorClass::Internal, "BIND_FAILED", e.to_string()))?;
    eprintln!("ctxpipe serving {} on http://{addr}/api/v1", ws.root().display());
    let app = router(AppState::new(ws, token));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| OpError::new(ErrorClass::Internal, "SERVE_FAILED", e.to_string()))
}
