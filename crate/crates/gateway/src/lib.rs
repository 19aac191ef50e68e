//! HTTP annotation service for interactive active-learning sessions.
//!
//! Endpoints:
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | `POST` | `/sessions` | `{config, mode, seed?}` → session view |
//! | `GET` | `/sessions/{id}` | session view |
//! | `GET` | `/sessions/{id}/query` | [`QueryPayload`], idempotent while pending |
//! | `POST` | `/sessions/{id}/label` | `{sample_id, label}` → [`Metrics`] |
//! | `POST` | `/sessions/{id}/auto` | `{steps?}` → [`Metrics`], simulated sessions only |
//! | `GET` | `/sessions/{id}/curve` | learning curve |
//! | `GET` | `/sessions/{id}/export?format=csv\|json` | curve document |
//!
//! Failures reply with [`ErrorBody`].

mod error;
mod registry;
mod routes;

use std::path::PathBuf;

pub use error::{ErrorBody, GatewayError};
pub use registry::{
    Budget, CreateRequest, Metrics, Mode, QueryPayload, Registry, SessionHandle, SessionView, CURVE_TAIL,
};
pub use routes::{router, AutoRequest, ExportParams, LabelRequest};

/// Environment variable that takes precedence over `--data-dir`.
pub const DATA_DIR_ENV: &str = "OL_DATA_DIR";

pub fn resolve_data_dir(flag: Option<PathBuf>, env: Option<String>) -> Option<PathBuf> {
    env.filter(|v| !v.is_empty()).map(PathBuf::from).or(flag)
}
