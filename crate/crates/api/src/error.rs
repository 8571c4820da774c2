use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use m2lads_core::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("range not satisfiable for {0} bytes")]
    RangeNotSatisfiable(u64),
    #[error("internal error: {0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, Json(json!({"error": "not_found"}))).into_response(),
            ApiError::BadRequest(m) => (
                StatusCode::BAD_REQUEST,
                Json(json!({"error": "bad_request", "message": m})),
            )
                .into_response(),
            ApiError::Conflict(m) => {
                (StatusCode::CONFLICT, Json(json!({"error": "conflict", "message": m}))).into_response()
            }
            ApiError::RangeNotSatisfiable(len) => (
                StatusCode::RANGE_NOT_SATISFIABLE,
                [(axum::http::header::CONTENT_RANGE, format!("bytes */{len}"))],
                Json(json!({"error": "range_not_satisfiable"})),
            )
                .into_response(),
            ApiError::Internal(m) => {
                let id = uuid::Uuid::new_v4().to_string();
                tracing::error!(error_id = %id, "{m}");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    Json(json!({"error": "internal", "id": id})),
                )
                    .into_response()
            }
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            return ApiError::Internal(e.to_string());
        }
        match e {
            PipelineError::Store(s) => s.into(),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}
