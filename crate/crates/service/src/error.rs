use std::fmt;

use axum::http::StatusCode;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceError {
    UnknownCollection(String),
    UnknownSession(String),
    Invalid(String),
    StaleQuery { expected: Option<usize> },
    Exhausted,
    Finalized,
    NoLabels,
    Internal(String),
}

impl ServiceError {
    pub fn invalid(message: impl Into<String>) -> Self {
        ServiceError::Invalid(message.into())
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownCollection(_) => "unknown_collection",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::StaleQuery { .. } => "stale_query",
            ServiceError::Exhausted => "budget_exhausted",
            ServiceError::Finalized => "session_finalized",
            ServiceError::NoLabels => "no_labels",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownCollection(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) | ServiceError::NoLabels => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::StaleQuery { .. } | ServiceError::Exhausted | ServiceError::Finalized => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceError::UnknownCollection(id) => write!(f, "unknown collection {id:?}"),
            ServiceError::UnknownSession(id) => write!(f, "unknown session {id:?}"),
            ServiceError::Invalid(msg) | ServiceError::Internal(msg) => f.write_str(msg),
            ServiceError::StaleQuery { expected: Some(q) } => {
                write!(f, "query_id does not match the current query {q}; refresh and retry")
            }
            ServiceError::StaleQuery { expected: None } => f.write_str("the session has no open query"),
            ServiceError::Exhausted => f.write_str("the labeling budget is used up; finalize the session"),
            ServiceError::Finalized => f.write_str("the session is finalized and can no longer change"),
            ServiceError::NoLabels => f.write_str("at least one label is required"),
        }
    }
}

impl std::error::Error for ServiceError {}

impl From<modelsel_core::Error> for ServiceError {
    fn from(e: modelsel_core::Error) -> Self {
        if e.is_data_error() || e.is_config_error() {
            ServiceError::Invalid(e.to_string())
        } else {
            ServiceError::Internal(e.to_string())
        }
    }
}

/// Structured error body. Session-scoped errors also carry the session's
/// position.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_query_id: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

impl ErrorBody {
    pub fn new(err: &ServiceError) -> Self {
        Self {
            code: err.code(),
            message: err.to_string(),
            expected_query_id: match err {
                ServiceError::StaleQuery { expected } => *expected,
                _ => None,
            },
            session_id: None,
            step: None,
            budget: None,
        }
    }
}
