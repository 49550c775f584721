use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use agile_core::session::Phase;
use agile_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    PhaseViolation,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict | ErrorCode::PhaseViolation => StatusCode::CONFLICT,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error body returned by every endpoint. `phase` is set for phase
/// violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), phase: None }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn phase(op: &str, phase: Phase) -> Self {
        Self { code: ErrorCode::PhaseViolation, message: format!("`{op}` not allowed in phase {phase}"), phase: Some(phase) }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Phase { op, phase } => Self::phase(op, phase),
            Error::MissingClass(class) => {
                Self::bad_request(format!("no {class} labels yet; rate more items so both classes are present"))
            }
            Error::NotPending { .. }
            | Error::UnknownItem(_)
            | Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::NotNormalized
            | Error::OutOfRange { .. }
            | Error::Empty(_)
            | Error::Json { .. } => Self::bad_request(message),
            Error::DuplicateRating { .. } | Error::VotesComplete { .. } | Error::CorpusExhausted | Error::Duplicate { .. } => {
                Self::conflict(message)
            }
            Error::MissingCheckpoint(_) | Error::OracleGap(_) => Self::not_found(message),
            _ => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}
