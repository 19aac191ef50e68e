use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ol_core::harness::HarnessError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no session with id {0:?}")]
    UnknownSession(String),
    #[error("session {0} labels through a human oracle and cannot auto-label")]
    ModeMismatch(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("no route for {0}")]
    NotFound(String),
    #[error("could not write snapshot: {0}")]
    Snapshot(#[from] std::io::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "UnknownSession",
            Self::ModeMismatch(_) => "ModeMismatch",
            Self::BadRequest(_) => "BadRequest",
            Self::NotFound(_) => "NotFound",
            Self::Snapshot(_) => "SnapshotFailed",
            Self::Harness(e) => match e {
                e if e.is_fidelity_exhausted() => "BudgetExhausted",
                HarnessError::ConfigInvalid(_) => "ConfigInvalid",
                HarnessError::MismatchedSeeds => "MismatchedSeeds",
                HarnessError::UnsupportedFormat(_) => "UnsupportedFormat",
                HarnessError::PoolExhausted => "PoolExhausted",
                HarnessError::LabelBudgetExhausted(_) => "LabelBudgetExhausted",
                HarnessError::StaleQuery { .. } => "StaleQuery",
                HarnessError::LabelOutOfRange { .. } => "LabelOutOfRange",
                HarnessError::NoPendingQuery => "NoPendingQuery",
                HarnessError::Dataset(_) => "ConfigInvalid",
                _ => "Internal",
            },
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.code() {
            "UnknownSession" | "NotFound" => StatusCode::NOT_FOUND,
            "BadRequest" | "ConfigInvalid" | "UnsupportedFormat" | "MismatchedSeeds" => StatusCode::BAD_REQUEST,
            "LabelOutOfRange" => StatusCode::UNPROCESSABLE_ENTITY,
            "ModeMismatch"
            | "PoolExhausted"
            | "LabelBudgetExhausted"
            | "BudgetExhausted"
            | "StaleQuery"
            | "NoPendingQuery" => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error_code: self.code().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
