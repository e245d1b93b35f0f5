use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use iss_core::IssError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: ErrorDetail { kind: kind.into(), message: message.into(), field: None },
            },
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }
}

/// Validation -> 400, dimension mismatch -> 422, runtime failures -> 500.
impl From<IssError> for ApiError {
    fn from(e: IssError) -> Self {
        let (status, kind, field) = match e.root() {
            IssError::DimensionMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "dimension_mismatch", None),
            IssError::Validation { field, .. } => (StatusCode::BAD_REQUEST, "validation", Some(field.clone())),
            IssError::Numeric { term, .. } => (StatusCode::BAD_REQUEST, "numeric", Some(term.clone())),
            IssError::TrainingDiverged { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "training_diverged", None),
            IssError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io", None),
            other if other.is_validation() => (StatusCode::BAD_REQUEST, "validation", None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", None),
        };
        ApiError {
            status,
            body: ErrorBody {
                error: ErrorDetail { kind: kind.into(), message: e.to_string(), field },
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
