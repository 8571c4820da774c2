//! Read-mostly HTTP API over a session store, consumed by the instructor dashboard.
//!
//! All routes live under `/api`; `GET /healthz` is the liveness probe.

mod error;
mod media;
pub mod schemas;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;

use m2lads_core::pipeline::{created_at_now, ingest_session, IngestManifest};
use m2lads_core::store::{FileStore, SessionFilter, SessionStore, StoreError};
use m2lads_core::types::Unit;
use m2lads_core::{SignalKind, TimestampMs};

pub use error::ApiError;

pub const DEFAULT_MAX_POINTS_CAP: usize = 5000;

#[derive(Clone, Debug)]
pub struct ApiConfig {
    pub bind_address: String,
    pub store_root: PathBuf,
    /// Exact origin, or `*` for any.
    pub cors_allowed_origin: String,
    pub max_points_cap: usize,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            bind_address: "127.0.0.1:8080".into(),
            store_root: PathBuf::from("m2lads-store"),
            cors_allowed_origin: "*".into(),
            max_points_cap: DEFAULT_MAX_POINTS_CAP,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<dyn SessionStore>,
    pub max_points_cap: usize,
}

pub fn router(state: AppState, cors_allowed_origin: &str) -> Result<Router, ServeError> {
    let origin = if cors_allowed_origin == "*" {
        AllowOrigin::any()
    } else {
        let value = HeaderValue::from_str(cors_allowed_origin)
            .map_err(|_| ServeError::InvalidConfig(format!("bad CORS origin `{cors_allowed_origin}`")))?;
        AllowOrigin::exact(value)
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::RANGE])
        .expose_headers([header::CONTENT_RANGE, header::ACCEPT_RANGES, header::CONTENT_LENGTH]);

    let api = Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/signals/{kind}", get(signal))
        .route("/sessions/{id}/activities", get(activities))
        .route("/sessions/{id}/analytics/correlations", get(correlations))
        .route("/sessions/{id}/performance", get(performance))
        .route("/sessions/{id}/summaries", get(summaries))
        .route("/sessions/{id}/frames/{video_id}", get(frames))
        .route("/sessions/{id}/media/{name}", get(media::serve_media));

    Ok(Router::new()
        .route("/healthz", get(healthz))
        .nest("/api", api)
        .fallback(|| async { ApiError::NotFound("no such route".into()) })
        .layer(cors)
        .layer(TraceLayer::new_for_http())
        .with_state(state))
}

/// Binds and serves until `shutdown` resolves; in-flight requests complete first.
pub async fn serve_with_shutdown(
    config: ApiConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    if config.max_points_cap == 0 {
        return Err(ServeError::InvalidConfig("max_points_cap must be at least 1".into()));
    }
    let store =
        FileStore::open_existing(&config.store_root).map_err(|e| ServeError::StoreUnavailable(e.to_string()))?;
    let state = AppState {
        store: Arc::new(store),
        max_points_cap: config.max_points_cap,
    };
    let app = router(state, &config.cors_allowed_origin)?;
    let listener = tokio::net::TcpListener::bind(&config.bind_address)
        .await
        .map_err(|source| ServeError::BindFailure {
            addr: config.bind_address.clone(),
            source,
        })?;
    let local: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(addr = ?local, root = %config.store_root.display(), "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServeError::BindFailure {
            addr: config.bind_address,
            source: e,
        })
}

/// Serves until Ctrl-C / SIGTERM.
pub async fn serve(config: ApiConfig) -> Result<(), ServeError> {
    serve_with_shutdown(config, shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct ListParams {
    learner_id: Option<String>,
    from: Option<i64>,
    to: Option<i64>,
}

async fn list_sessions(
    State(state): State<AppState>,
    params: Result<Query<ListParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(params) = params.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let filter = SessionFilter {
        learner_id: params.learner_id,
        from: params.from.map(TimestampMs),
        to: params.to.map(TimestampMs),
    };
    let entries = blocking(move || Ok(state.store.list_sessions(&filter)?)).await?;
    Ok(Json(entries).into_response())
}

async fn create_session(State(state): State<AppState>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let id = blocking(move || {
        let manifest = IngestManifest::from_json(&body, std::path::Path::new("."))?;
        let created_at = created_at_now()?;
        Ok(ingest_session(&manifest, state.store.as_ref(), created_at)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": id}))).into_response())
}

#[derive(Serialize)]
struct SignalInfo {
    kind: SignalKind,
    unit: Unit,
    rows: usize,
}

async fn session_summary(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = blocking(move || {
        let record = state.store.get_session(&id)?;
        let media = state.store.list_media(&id)?;
        let signals: Vec<SignalInfo> = record
            .learner_matrices
            .values()
            .map(|lm| SignalInfo {
                kind: lm.kind,
                unit: lm.kind.unit(),
                rows: lm.rows.len(),
            })
            .collect();
        let videos: Vec<&str> = record.frame_indexes.iter().map(|f| f.video_id.as_str()).collect();
        Ok(json!({
            "session_id": record.session_id,
            "learner": record.learner,
            "window": record.window,
            "created_at": record.created_at,
            "signals": signals,
            "activity_count": record.merged_matrix.intervals.len(),
            "blinks": record.blinks,
            "pretest": record.pretest,
            "posttest": record.posttest,
            "frame_videos": videos,
            "media": media,
        }))
    })
    .await?;
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct SignalParams {
    from: Option<i64>,
    to: Option<i64>,
    max_points: Option<usize>,
}

async fn signal(
    State(state): State<AppState>,
    Path((id, kind)): Path<(String, String)>,
    params: Result<Query<SignalParams>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(params) = params.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let kind: SignalKind = kind
        .parse()
        .map_err(|e: m2lads_core::types::UnknownSignalKind| ApiError::BadRequest(e.to_string()))?;
    let cap = state.max_points_cap;
    let max_points = match params.max_points {
        Some(0) => return Err(ApiError::BadRequest("max_points must be positive".into())),
        Some(n) => n.min(cap),
        None => cap,
    };
    let body = blocking(move || {
        let record = state.store.get_session(&id)?;
        let from = params.from.map_or(record.window.start, TimestampMs);
        let to = params.to.map_or(record.window.end, TimestampMs);
        let points = state.store.query_signal(&id, kind, from, to, max_points)?;
        Ok(json!({
            "session_id": id,
            "kind": kind,
            "unit": kind.unit(),
            "from": from,
            "to": to,
            "max_points": max_points,
            "points": points,
        }))
    })
    .await?;
    Ok(Json(body).into_response())
}

async fn activities(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(state.store.get_session(&id)?)).await?;
    Ok(Json(&record.merged_matrix).into_response())
}

async fn correlations(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(state.store.get_session(&id)?)).await?;
    Ok(Json(&record.correlations).into_response())
}

async fn performance(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(state.store.get_session(&id)?)).await?;
    Ok(Json(&record.performance).into_response())
}

async fn summaries(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(state.store.get_session(&id)?)).await?;
    Ok(Json(&record.summaries).into_response())
}

async fn frames(
    State(state): State<AppState>,
    Path((id, video_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let record = blocking(move || Ok(state.store.get_session(&id)?)).await?;
    let index = record
        .frame_indexes
        .iter()
        .find(|f| f.video_id == video_id)
        .ok_or_else(|| ApiError::NotFound(format!("frame index `{video_id}`")))?;
    Ok(Json(index).into_response())
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(m) => ApiError::NotFound(m),
            StoreError::ValidationFailed(m) | StoreError::InvalidRange(m) => ApiError::BadRequest(m),
            StoreError::PathViolation(m) => ApiError::BadRequest(format!("invalid name `{m}`")),
            StoreError::DuplicateSession(id) => ApiError::Conflict(format!("session `{id}` already exists")),
            StoreError::NameCollision(n) => ApiError::Conflict(format!("media `{n}` already exists")),
            other => ApiError::Internal(other.to_string()),
        }
    }
}
