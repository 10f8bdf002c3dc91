//! HTTP API over in-memory sessions.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/sessions` | `{source, table, docs?}` | `201 {session_id}` |
//! | GET | `/sessions/{id}` | | `{session_id, revision, running, document, statuses, alert_counts, last_run}` |
//! | POST | `/sessions/{id}/run` | `{until?, wait?}` | `202 {running}` or, with `wait`, `200` run report |
//! | PUT | `/sessions/{id}/context` | `{part, value, revision?}` | `200 {revision, invalidated}` |
//! | PUT | `/sessions/{id}/verdicts/{step}` | `{is_error, note?, revision?}` | `200 {revision, verdict}` |
//! | POST | `/sessions/{id}/query` | `{q}` | `{columns, rows, row_indices}` or `400 {offset, message}` |
//! | GET | `/sessions/{id}/export` | | profile document |
//! | GET | `/sessions/{id}/charts` | | chart specs |
//!
//! `source` is a CSV path on the server and `docs` optional documentation
//! text. Errors are `{"error": message}`: 404 for unknown sessions or steps,
//! 409 for conflicting edits (stale `revision`, finalized verdict, run in
//! progress, context not ready), 422 with the validator diagnostic when an
//! edit is rejected.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};

use crate::context::ContextEdit;
use crate::ingest::{load_csv, CsvOptions};
use crate::llm::ChatProvider;
use crate::pipeline::{JobOutput, PipelineError, RunReport, Session, Settings, StepFilter, StepId};
use crate::query::run_query;
use crate::report::{export_json, session_charts, ReportError};

/// One session plus its background-run bookkeeping.
pub struct SessionHandle {
    session: Mutex<Session>,
    running: Mutex<bool>,
    last_run: Mutex<Option<RunReport>>,
}

impl SessionHandle {
    fn lock(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    provider: Arc<dyn ChatProvider>,
    provider_label: String,
    settings: Settings,
}

impl AppState {
    pub fn new(provider: Arc<dyn ChatProvider>, settings: Settings) -> Self {
        let provider_label = provider.describe();
        AppState {
            inner: Arc::new(Inner {
                sessions: RwLock::new(HashMap::new()),
                provider,
                provider_label,
                settings,
            }),
        }
    }

    /// Registers an existing session and returns its id.
    pub fn insert(&self, session: Session) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let handle = Arc::new(SessionHandle {
            session: Mutex::new(session),
            running: Mutex::new(false),
            last_run: Mutex::new(None),
        });
        self.inner.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), handle);
        id
    }

    fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: JsonValue,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnknownStep(_) => StatusCode::NOT_FOUND,
            PipelineError::AlreadyFinalized(_) | PipelineError::StepNotDone(_) | PipelineError::ContextIncomplete => {
                StatusCode::CONFLICT
            }
            PipelineError::EditRejected(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

/// Parses a JSON body by hand so shape errors are 400s and 422 stays
/// reserved for validator rejections.
fn body<T: for<'de> Deserialize<'de>>(raw: &[u8]) -> Result<T, ApiError> {
    let raw = if raw.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { raw };
    serde_json::from_slice(raw).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))
}

fn check_revision(session: &Session, expected: Option<u64>) -> Result<(), ApiError> {
    match expected {
        Some(r) if r != session.revision() => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("revision {r} is out of date; current revision is {}", session.revision()),
        )),
        _ => Ok(()),
    }
}

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/run", post(run_session))
        .route("/sessions/{id}/context", put(edit_context))
        .route("/sessions/{id}/verdicts/{*step}", put(override_verdict))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/charts", get(charts))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    app
}

pub async fn serve(addr: SocketAddr, state: AppState, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir)).await
}

#[derive(Deserialize)]
struct CreateBody {
    source: PathBuf,
    table: String,
    #[serde(default)]
    docs: Option<String>,
}

async fn create_session(State(state): State<AppState>, raw: axum::body::Bytes) -> Result<Response, ApiError> {
    let b: CreateBody = body(&raw)?;
    let table = tokio::task::spawn_blocking(move || load_csv(&b.source, &b.table, CsvOptions::default()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let id = state.insert(Session::new(table, b.docs, state.inner.settings));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JsonValue>, ApiError> {
    let h = state.get(&id)?;
    let running = *h.running.lock().unwrap_or_else(|e| e.into_inner());
    let last_run = h.last_run.lock().unwrap_or_else(|e| e.into_inner()).clone();
    let s = h.lock();
    let document = export_json(&s, &state.inner.provider_label).ok();
    let statuses: IndexMap<String, _> = s.steps().iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let t = s.table();
    Ok(Json(json!({
        "session_id": id,
        "revision": s.revision(),
        "running": running,
        "table": {"name": t.name(), "rows": t.row_count(), "columns": t.schema()},
        "document": document,
        "statuses": statuses,
        "alert_counts": s.alert_counts(),
        "last_run": last_run,
    })))
}

#[derive(Deserialize, Default)]
struct RunBody {
    #[serde(default)]
    until: Option<String>,
    #[serde(default)]
    wait: bool,
}

/// Runs waves until nothing selected is ready. Jobs execute without the
/// session lock held so reads and edits stay responsive; results of steps
/// invalidated meanwhile are discarded by `commit`.
fn drive(handle: &SessionHandle, provider: &dyn ChatProvider, filter: Option<&StepFilter>) -> RunReport {
    let mut report = RunReport::default();
    handle.lock().begin_run();
    loop {
        let jobs = handle.lock().plan_wave(filter);
        if jobs.is_empty() {
            break;
        }
        tracing::debug!("executing {} steps", jobs.len());
        let outputs: Vec<JobOutput> = jobs.par_iter().map(|j| j.execute(provider)).collect();
        handle.lock().commit(outputs, &mut report);
    }
    report.blocked = handle.lock().blocked(filter);
    report
}

async fn run_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    raw: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let b: RunBody = body(&raw)?;
    let h = state.get(&id)?;
    {
        let mut running = h.running.lock().unwrap_or_else(|e| e.into_inner());
        if *running {
            return Err(ApiError::new(StatusCode::CONFLICT, "a run is already in progress"));
        }
        *running = true;
    }
    let provider = state.inner.provider.clone();
    let filter = b.until.map(StepFilter::new);
    let task = tokio::task::spawn_blocking({
        let h = h.clone();
        move || {
            let report = drive(&h, provider.as_ref(), filter.as_ref());
            *h.last_run.lock().unwrap_or_else(|e| e.into_inner()) = Some(report.clone());
            *h.running.lock().unwrap_or_else(|e| e.into_inner()) = false;
            report
        }
    });
    if b.wait {
        let report = task
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(Json(json!(report)).into_response())
    } else {
        Ok((StatusCode::ACCEPTED, Json(json!({ "running": true })).into_response()).into_response())
    }
}

#[derive(Deserialize)]
struct ContextBody {
    #[serde(flatten)]
    edit: ContextEdit,
    #[serde(default)]
    revision: Option<u64>,
}

async fn edit_context(
    State(state): State<AppState>,
    Path(id): Path<String>,
    raw: axum::body::Bytes,
) -> Result<Json<JsonValue>, ApiError> {
    let h = state.get(&id)?;
    let b: ContextBody = body(&raw)?;
    let mut s = h.lock();
    check_revision(&s, b.revision)?;
    let invalidated = s.apply_context_edit(&b.edit).map_err(|e| match e {
        // The bare diagnostic, exactly as the model would have received it.
        PipelineError::EditRejected(d) => ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": d }),
        },
        other => other.into(),
    })?;
    let invalidated: Vec<String> = invalidated.iter().map(ToString::to_string).collect();
    Ok(Json(json!({ "revision": s.revision(), "invalidated": invalidated })))
}

#[derive(Deserialize)]
struct VerdictBody {
    is_error: bool,
    #[serde(default)]
    note: String,
    #[serde(default)]
    revision: Option<u64>,
}

async fn override_verdict(
    State(state): State<AppState>,
    Path((id, step)): Path<(String, String)>,
    raw: axum::body::Bytes,
) -> Result<Json<JsonValue>, ApiError> {
    let h = state.get(&id)?;
    let step: StepId = step.parse().map_err(|e: String| ApiError::new(StatusCode::NOT_FOUND, e))?;
    let b: VerdictBody = body(&raw)?;
    let mut s = h.lock();
    check_revision(&s, b.revision)?;
    s.apply_verdict_override(&step, b.is_error, &b.note)?;
    let verdict = s.verdict(&step).map(|v| v.to_payload());
    Ok(Json(json!({ "revision": s.revision(), "verdict": verdict })))
}

#[derive(Deserialize)]
struct QueryBody {
    q: String,
}

async fn query(State(state): State<AppState>, Path(id): Path<String>, raw: axum::body::Bytes) -> Response {
    let result = (|| {
        let h = state.get(&id)?;
        let b: QueryBody = body(&raw)?;
        // Queries read an immutable snapshot of the table.
        let table = h.lock().table_arc();
        run_query(&b.q, &table).map_err(|e| ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!(e.to_wire()),
        })
    })();
    match result {
        Ok(r) => Json(json!({ "columns": r.columns, "rows": r.rows, "row_indices": r.row_indices })).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JsonValue>, ApiError> {
    let h = state.get(&id)?;
    let s = h.lock();
    match export_json(&s, &state.inner.provider_label) {
        Ok(doc) => Ok(Json(json!(doc))),
        Err(e @ ReportError::NothingToExport) => Err(ApiError::new(StatusCode::CONFLICT, e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn charts(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JsonValue>, ApiError> {
    let h = state.get(&id)?;
    let s = h.lock();
    Ok(Json(json!(session_charts(&s))))
}
