use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::{Deserialize, Serialize};

use unlearn_core::Error;

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_path: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, field_path: Option<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                field_path,
            },
        }
    }

    pub fn bad_request(message: impl Into<String>, field_path: Option<&str>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message, field_path.map(str::to_string))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code, field_path) = match &e {
            Error::Argument(_) => (StatusCode::BAD_REQUEST, "invalid_argument", None),
            Error::Partition(_) => (StatusCode::BAD_REQUEST, "partition", None),
            Error::Format { path, .. } => (StatusCode::BAD_REQUEST, "format", Some(path.clone())),
            Error::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found", None),
            Error::Duplicate(_) => (StatusCode::CONFLICT, "duplicate", None),
            Error::Training { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "training_diverged", None),
            Error::Method { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "method_failed", None),
            Error::Numeric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "numeric", None),
            Error::Metric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "metric", None),
            Error::UndefinedSimilarity(_) => (StatusCode::UNPROCESSABLE_ENTITY, "undefined_similarity", None),
            Error::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io", None),
        };
        Self::new(status, code, message, field_path)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let text = serde_json::to_string(&self.body).unwrap_or_else(|_| format!("{{\"code\":\"{}\"}}", self.body.code));
        (self.status, [(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response()
    }
}
