//! HTTP resources over a project.
//!
//! Handlers only translate between HTTP and [`Project`] calls. Every call
//! runs on the blocking pool behind one project lock, so engine mutations
//! keep a single writer. Bodies are JSON; every response carries
//! `schema_version`.

use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mediate_core::agility::{AgilityError, DistanceReport};
use mediate_core::events::{parse_event_log, Event};
use mediate_core::matching::MatchError;
use mediate_core::model::CollaborationModel;
use mediate_core::orchestrator::RunError;
use mediate_core::pipeline::{Decision, PipelineError, Project, RunOptions, Stage, REPORT_SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Clone)]
pub struct AppState {
    project: Arc<Mutex<Project>>,
}

impl AppState {
    pub fn new(project: Project) -> Self {
        Self { project: Arc::new(Mutex::new(project)) }
    }
}

/// A field-level problem with a request.
#[derive(Debug, Serialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    code: i32,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn bad_request(message: String, fields: Vec<FieldError>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "request", code: 2, message, fields }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = e.exit_code();
        let message = e.to_string();
        let (status, kind, fields) = match &e {
            PipelineError::Config(_) => (StatusCode::BAD_REQUEST, "config", vec![]),
            PipelineError::Prerequisite { missing, .. } => {
                (StatusCode::CONFLICT, "prerequisite", vec![FieldError { path: missing.clone(), message: "missing artifact".into() }])
            }
            PipelineError::Stale { .. } => (StatusCode::CONFLICT, "stale", vec![]),
            PipelineError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io", vec![]),
            PipelineError::Invalid(r) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_model",
                r.findings.iter().map(|f| FieldError { path: f.path.clone(), message: format!("{}: {}", f.rule, f.message) }).collect(),
            ),
            PipelineError::Input(missing) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "input",
                missing.iter().map(|m| FieldError { path: format!("input.{m}"), message: "required start field".into() }).collect(),
            ),
            PipelineError::Match(MatchError::NotChosen(a)) => {
                (StatusCode::NOT_FOUND, "not_found", vec![FieldError { path: a.clone(), message: "no such activity or candidate".into() }])
            }
            PipelineError::Run(RunError::UnknownInstance(id)) => {
                (StatusCode::NOT_FOUND, "not_found", vec![FieldError { path: id.clone(), message: "no such run".into() }])
            }
            PipelineError::Agility(AgilityError::Stage { .. } | AgilityError::NoAdaptation) => (StatusCode::CONFLICT, "adaptation", vec![]),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "stage", vec![]),
        };
        Self { status, kind, code, message, fields }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "error": { "kind": self.kind, "code": self.code, "message": self.message, "fields": self.fields },
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn envelope(data: impl Serialize) -> Json<Value> {
    Json(json!({ "schema_version": REPORT_SCHEMA_VERSION, "data": data }))
}

/// Parses a JSON body, reporting the offending field path.
fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        ApiError::bad_request(format!("invalid request body: {message}"), vec![FieldError { path, message }])
    })
}

async fn with<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Project) -> Result<T, PipelineError> + Send + 'static,
{
    let project = state.project.clone();
    tokio::task::spawn_blocking(move || {
        let p = project.lock().unwrap_or_else(|e| e.into_inner());
        f(&p)
    })
    .await
    .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", code: 1, message: e.to_string(), fields: vec![] })?
    .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/project", get(project))
        .route("/api/model", get(get_model).put(put_model))
        .route("/api/pipeline", post(pipeline))
        .route("/api/stages/{stage}", post(stage))
        .route("/api/cartography", get(cartography))
        .route("/api/matches", get(matches))
        .route("/api/matches/pending", get(pending))
        .route("/api/matches/{activity}", post(decide))
        .route("/api/workflows", get(workflows))
        .route("/api/workflows/compile", post(compile))
        .route("/api/runs", get(runs).post(start_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/interrupt", post(interrupt))
        .route("/api/runs/{id}/resume", post(resume))
        .route("/api/runs/{id}/migrate", post(migrate))
        .route("/api/runs/{id}/tasks/{node}", post(complete_task))
        .route("/api/events", get(events).post(ingest))
        .route("/api/twin", get(twin))
        .route("/api/twin/dispatch", post(dispatch))
        .route("/api/reports", get(reports))
        .route("/api/reports/{stage}", get(report))
        .with_state(state)
}

/// Serves the API until interrupted.
pub async fn serve(project: Project, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(project)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn stage_param(s: &str) -> Result<Stage, ApiError> {
    s.parse().map_err(|e: String| ApiError { status: StatusCode::NOT_FOUND, kind: "not_found", code: 2, message: e, fields: vec![] })
}

async fn project(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| {
        Ok(envelope(json!({
            "root": p.root,
            "config": p.config,
            "version": p.version(),
            "model_token": p.model_token()?,
            "runs": p.runs(),
        })))
    })
    .await
}

async fn get_model(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(json!({ "token": p.model_token()?, "model": p.source_model()? })))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelUpdate {
    model: CollaborationModel,
    #[serde(default)]
    token: Option<String>,
}

async fn put_model(State(s): State<AppState>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let mut u: ModelUpdate = body(&bytes)?;
    if let Some(t) = headers.get("if-match").and_then(|v| v.to_str().ok()) {
        u.token.get_or_insert_with(|| t.trim_matches('"').to_string());
    }
    with(&s, move |p| Ok(envelope(json!({ "token": p.save_model(&u.model, u.token.as_deref())? })))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    id: String,
    input: Map<String, Value>,
    #[serde(default)]
    options: RunOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineRequest {
    stages: Vec<Stage>,
    #[serde(default)]
    run: Option<RunRequest>,
}

async fn pipeline(State(s): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: PipelineRequest = body(&bytes)?;
    with(&s, move |p| {
        let run = req.run.as_ref().map(|r| (r.id.as_str(), &r.input, &r.options));
        Ok(envelope(p.run_pipeline(&req.stages, run)?))
    })
    .await
}

async fn stage(State(s): State<AppState>, Path(stage): Path<String>) -> ApiResult {
    let stage = stage_param(&stage)?;
    if stage == Stage::Run {
        return Err(ApiError::bad_request("start runs with POST /api/runs".into(), vec![]));
    }
    with(&s, move |p| Ok(envelope(p.run_pipeline(&[stage], None)?.remove(0)))).await
}

async fn cartography(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.cartography()?))).await
}

async fn matches(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.matches()?))).await
}

async fn pending(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.pending_matches()?))).await
}

async fn decide(State(s): State<AppState>, Path(activity): Path<String>, bytes: Bytes) -> ApiResult {
    let d: Decision = body(&bytes)?;
    with(&s, move |p| Ok(envelope(p.decide(&activity, &d)?))).await
}

async fn workflows(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(json!({ "version": p.version(), "project": p.compiled()? })))).await
}

async fn compile(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.stage_compile()?))).await
}

async fn runs(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.runs()))).await
}

fn run_body(report: mediate_core::pipeline::StageReport, run: mediate_core::orchestrator::ProjectRun) -> Json<Value> {
    envelope(json!({ "report": report, "run": run }))
}

async fn start_run(State(s): State<AppState>, bytes: Bytes) -> ApiResult {
    let r: RunRequest = body(&bytes)?;
    with(&s, move |p| {
        let (report, run) = p.stage_run(&r.id, &r.input, &r.options)?;
        Ok(run_body(report, run))
    })
    .await
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    with(&s, move |p| {
        let (run, _, engine, _) = p.load_run(&id, &RunOptions::default())?;
        let instances: Vec<_> = run.instances.values().filter_map(|i| engine.instance(i)).collect();
        Ok(envelope(json!({ "run": run, "instances": instances })))
    })
    .await
}

async fn interrupt(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    with(&s, move |p| p.interrupt_run(&id).map(|(r, run)| run_body(r, run))).await
}

async fn resume(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    with(&s, move |p| p.resume_run(&id).map(|(r, run)| run_body(r, run))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MigrateRequest {
    id: String,
}

async fn migrate(State(s): State<AppState>, Path(old): Path<String>, bytes: Bytes) -> ApiResult {
    let m: MigrateRequest = body(&bytes)?;
    with(&s, move |p| p.migrate_run(&old, &m.id).map(|(r, run)| run_body(r, run))).await
}

async fn complete_task(State(s): State<AppState>, Path((id, node)): Path<(String, String)>, bytes: Bytes) -> ApiResult {
    let payload: Map<String, Value> = body(&bytes)?;
    with(&s, move |p| p.complete_task(&id, &node, payload).map(|(r, run)| run_body(r, run))).await
}

/// A JSON array, a single event, or newline-delimited events.
fn parse_events(bytes: &[u8]) -> Result<Vec<Event>, ApiError> {
    let trimmed = bytes.trim_ascii_start();
    match trimmed.first() {
        Some(b'[') => body(bytes),
        Some(b'{') if serde_json::from_slice::<Value>(bytes).is_ok() => body::<Event>(bytes).map(|e| vec![e]),
        _ => {
            let text = std::str::from_utf8(bytes).map_err(|e| ApiError::bad_request(e.to_string(), vec![]))?;
            parse_event_log(text).map_err(|e| ApiError::bad_request(format!("invalid event log: {e}"), vec![]))
        }
    }
}

async fn ingest(State(s): State<AppState>, bytes: Bytes) -> ApiResult {
    let events = parse_events(&bytes)?;
    with(&s, move |p| {
        let total = p.ingest(&events)?;
        let (twin, _) = p.monitor(&p.ingested()?, false)?;
        Ok(envelope(json!({ "accepted": events.len(), "total": total, "watermark": twin.last_applied, "malformed": twin.malformed })))
    })
    .await
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: usize,
}

async fn events(State(s): State<AppState>, Query(q): Query<Since>) -> ApiResult {
    with(&s, move |p| {
        let all = p.ingested()?;
        let next = all.len();
        Ok(envelope(json!({ "events": all.into_iter().skip(q.since).collect::<Vec<_>>(), "next": next })))
    })
    .await
}

async fn twin(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| {
        let (twin, out) = p.monitor(&p.ingested()?, false)?;
        let history: Vec<Value> = out.reports.iter().map(|r: &DistanceReport| json!({ "total": r.total, "dominant": r.dominant, "verdict": r.verdict })).collect();
        Ok(envelope(json!({
            "report": out.reports.last(),
            "reentry": out.reentry,
            "history": history,
            "watermark": twin.last_applied,
            "unmatched": twin.unmatched,
            "malformed": twin.malformed,
            "expected": twin.expected,
            "field": twin.field,
        })))
    })
    .await
}

async fn dispatch(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.monitor(&p.ingested()?, true)?.1))).await
}

async fn reports(State(s): State<AppState>) -> ApiResult {
    with(&s, |p| Ok(envelope(p.reports()))).await
}

async fn report(State(s): State<AppState>, Path(stage): Path<String>) -> ApiResult {
    let stage = stage_param(&stage)?;
    with(&s, move |p| Ok(envelope(p.stage_report(stage)?))).await
}
