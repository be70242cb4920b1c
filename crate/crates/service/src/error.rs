use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use triage_core::Error;

/// JSON error body: `{"error": {"code", "message", "field"?}}`.
#[derive(Debug)]
pub enum ApiError {
    Validation { field: String, message: String },
    NotFound(String),
    NoModel,
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

#[derive(Serialize)]
struct Body<'a> {
    error: Detail<'a>,
}

#[derive(Serialize)]
struct Detail<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl ApiError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Wraps an engine validation error, prefixing its field with `at`.
    pub fn from_engine_at(at: &str, e: Error) -> Self {
        match e {
            Error::Validation { field, reason } => {
                let path = if at.is_empty() {
                    field
                } else {
                    format!("{at}.{field}")
                };
                ApiError::validation(path, reason)
            }
            other => other.into(),
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ApiError::Validation { .. } => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { field, reason } => ApiError::validation(field, reason),
            Error::NoModel => ApiError::NoModel,
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let (code, message, field) = match &self {
            ApiError::Validation { field, message } => ("validation", message.as_str(), Some(field.as_str())),
            ApiError::NotFound(m) => ("not_found", m.as_str(), None),
            ApiError::NoModel => ("no_model", "no trained model is available", None),
            ApiError::Conflict(m) => ("conflict", m.as_str(), None),
            ApiError::Unprocessable(m) => ("unprocessable", m.as_str(), None),
            ApiError::Internal(m) => ("internal", m.as_str(), None),
        };
        let body = Body {
            error: Detail { code, message, field },
        };
        (status, Json(body)).into_response()
    }
}
