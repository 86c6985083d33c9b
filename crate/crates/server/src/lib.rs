//! HTTP/JSON front end for [`SessionManager`].
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/sessions` | session config, `task` inline or by id | session state, 201 |
//! | GET | `/sessions/{id}` | | session state |
//! | POST | `/sessions/{id}/preferences` | `{"labels": [1, 0, ...]}` | session state |
//! | GET | `/sessions/{id}/candidates` | | current proposal |
//! | POST | `/sessions/{id}/choice` | `{"side": "first" \| "second", "t": 3}` | session state |
//! | GET | `/sessions/{id}/heatmap` | `d1`, `d2`, `res` | heatmap slice |
//! | GET | `/sessions/{id}/record` | | sealed run record |
//! | DELETE | `/sessions/{id}` | | aborted session state |
//!
//! Every payload carries a `schema` tag. Wrong-phase requests answer 409,
//! unknown ids 404 and malformed bodies 400.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hlmbo::orchestrator::{ChooseRequest, SessionConfig, SessionManager};
use hlmbo::task::BlackBoxTask;
use hlmbo::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const CREATE_SCHEMA: &str = "hlmbo.create/1";
pub const CANDIDATES_SCHEMA: &str = "hlmbo.candidates/1";
pub const HEATMAP_SCHEMA: &str = "hlmbo.heatmap/1";
pub const ERROR_SCHEMA: &str = "hlmbo.error/1";

pub const DEFAULT_RESOLUTION: usize = 25;
pub const MAX_RESOLUTION: usize = 200;

#[derive(Clone)]
pub struct AppState {
    pub sessions: SessionManager,
    /// Tasks a create request may name by id.
    pub tasks: Arc<HashMap<String, BlackBoxTask>>,
}

impl AppState {
    pub fn new(sessions: SessionManager, tasks: impl IntoIterator<Item = BlackBoxTask>) -> Self {
        Self { sessions, tasks: Arc::new(tasks.into_iter().map(|t| (t.id.clone(), t)).collect()) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session_state).delete(abort))
        .route("/sessions/{id}/preferences", post(preferences))
        .route("/sessions/{id}/candidates", get(candidates))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/heatmap", get(heatmap))
        .route("/sessions/{id}/record", get(record))
        .with_state(state)
}

#[derive(Serialize)]
struct Versioned<T> {
    schema: &'static str,
    #[serde(flatten)]
    body: T,
}

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

/// HTTP status and short machine-readable kind for an error.
pub fn classify(e: &Error) -> (StatusCode, &'static str) {
    match e {
        Error::Phase { .. } => (StatusCode::CONFLICT, "phase"),
        Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Error::BadRequest(_)
        | Error::Config(_)
        | Error::Domain(_)
        | Error::InvalidSpace(_)
        | Error::Shape(_)
        | Error::EmptyRequest(_)
        | Error::InvalidFamily(_)
        | Error::HypothesisUnavailable(_)
        | Error::Json(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        let body = serde_json::json!({ "schema": ERROR_SCHEMA, "error": kind, "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(Error::BadRequest(msg.into()))
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| bad(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> hlmbo::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::BadRequest(format!("request worker failed: {e}"))))?
        .map_err(ApiError)
}

/// Turns a create body into a config, resolving a task given by id.
pub fn create_config(body: &[u8], tasks: &HashMap<String, BlackBoxTask>) -> Result<SessionConfig, ApiError> {
    let mut v: Value = parse(body)?;
    let obj = v.as_object_mut().ok_or_else(|| bad("session config must be a JSON object"))?;
    match obj.remove("schema") {
        None => {}
        Some(Value::String(s)) if s == CREATE_SCHEMA => {}
        Some(other) => return Err(bad(format!("unsupported schema {other}, expected {CREATE_SCHEMA}"))),
    }
    if let Some(Value::String(id)) = obj.get("task") {
        let task = tasks.get(id).ok_or_else(|| bad(format!("unknown task {id:?}")))?;
        obj.insert("task".into(), serde_json::to_value(task).map_err(|e| ApiError(e.into()))?);
    }
    serde_json::from_value(v).map_err(|e| bad(format!("invalid session config: {e}")))
}

async fn create(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let config = create_config(&body, &app.tasks)?;
    let sessions = app.sessions.clone();
    let state = blocking(move || sessions.create(config)).await?;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn session_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.sessions.state(&id)?))
}

#[derive(Deserialize)]
struct LabelsBody {
    labels: Vec<u8>,
}

async fn preferences(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let LabelsBody { labels } = parse(&body)?;
    let sessions = app.sessions.clone();
    Ok(Json(blocking(move || sessions.submit_labels(&id, &labels)).await?))
}

async fn candidates(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(Versioned { schema: CANDIDATES_SCHEMA, body: app.sessions.candidates(&id)? }))
}

async fn choice(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: ChooseRequest = parse(&body)?;
    let sessions = app.sessions.clone();
    Ok(Json(blocking(move || sessions.choose(&id, req)).await?))
}

#[derive(Deserialize)]
struct HeatmapQuery {
    d1: usize,
    d2: usize,
    res: Option<usize>,
}

async fn heatmap(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<HeatmapQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query.map_err(|e| bad(format!("bad heatmap query: {e}")))?;
    let res = q.res.unwrap_or(DEFAULT_RESOLUTION);
    if !(2..=MAX_RESOLUTION).contains(&res) {
        return Err(bad(format!("res must lie in 2..={MAX_RESOLUTION}")));
    }
    let sessions = app.sessions.clone();
    let slice = blocking(move || sessions.heatmap(&id, (q.d1, q.d2), res, None)).await?;
    Ok(Json(Versioned { schema: HEATMAP_SCHEMA, body: slice }))
}

async fn abort(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.sessions.abort(&id, "deleted by client")?))
}

async fn record(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.sessions.record(&id)?))
}
