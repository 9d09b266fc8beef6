use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use narrative_core::orchestrator::TurnFailed;
use narrative_core::transcript::TranscriptError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session `{0}`")]
    SessionNotFound(String),
    #[error("session `{0}` is closed")]
    SessionClosed(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("client_text must not be empty")]
    EmptyMessage,
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    TurnFailed(#[from] TurnFailed),
    #[error("storage: {0}")]
    Storage(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl From<TranscriptError> for ServiceError {
    fn from(e: TranscriptError) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::SessionClosed(_) => "session_closed",
            ServiceError::UnknownVariant(_) => "unknown_variant",
            ServiceError::EmptyMessage => "empty_message",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::TurnFailed(_) => "turn_failed",
            ServiceError::Storage(_) => "storage_error",
            ServiceError::Internal(_) => "internal_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::SessionClosed(_) => StatusCode::CONFLICT,
            ServiceError::UnknownVariant(_)
            | ServiceError::EmptyMessage
            | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::TurnFailed(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Storage(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if matches!(self, ServiceError::Storage(_) | ServiceError::Internal(_)) {
            tracing::error!(error = %self, "request failed");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
