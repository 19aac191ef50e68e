use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ol_core::harness::{export_curve, ExportFormat};
use ol_core::session::SampleId;
use serde::Deserialize;
use tower_http::cors::CorsLayer;

use crate::error::GatewayError;
use crate::registry::{CreateRequest, Registry, Result};

#[derive(Debug, Deserialize)]
pub struct LabelRequest {
    pub sample_id: SampleId,
    pub label: usize,
}

#[derive(Debug, Default, Deserialize)]
pub struct AutoRequest {
    #[serde(default)]
    pub steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct ExportParams {
    #[serde(default)]
    pub format: Option<String>,
}

type Shared = State<Arc<Registry>>;

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    payload
        .map(|Json(t)| t)
        .map_err(|e| GatewayError::BadRequest(e.body_text()))
}

async fn create_session(
    State(reg): Shared,
    payload: std::result::Result<Json<CreateRequest>, JsonRejection>,
) -> Result<impl IntoResponse> {
    let view = reg.create(body(payload)?)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn session(State(reg): Shared, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(reg.read(&id, |h| Ok(h.view()))?))
}

async fn next_query(State(reg): Shared, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(reg.update(&id, |h| h.next_query())?))
}

async fn submit_label(
    State(reg): Shared,
    Path(id): Path<String>,
    payload: std::result::Result<Json<LabelRequest>, JsonRejection>,
) -> Result<impl IntoResponse> {
    let req = body(payload)?;
    Ok(Json(reg.update(&id, |h| h.submit_label(req.sample_id, req.label))?))
}

async fn auto_label(
    State(reg): Shared,
    Path(id): Path<String>,
    payload: Option<Json<AutoRequest>>,
) -> Result<impl IntoResponse> {
    let steps = payload.and_then(|Json(r)| r.steps);
    Ok(Json(reg.update(&id, |h| h.auto_label(steps))?))
}

async fn curve(State(reg): Shared, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(reg.read(&id, |h| Ok(h.engine.curve().clone()))?))
}

async fn export(
    State(reg): Shared,
    Path(id): Path<String>,
    params: std::result::Result<Query<ExportParams>, QueryRejection>,
) -> Result<Response> {
    let params = params.map_err(|e| GatewayError::BadRequest(e.body_text()))?;
    let format: ExportFormat = params.format.as_deref().unwrap_or("csv").parse()?;
    let doc = reg.read(&id, |h| {
        let e = &h.engine;
        Ok(export_curve(&e.config().strategy.name(), e.seed(), e.curve(), format)?)
    })?;
    let content_type = match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], doc).into_response())
}

async fn not_found(uri: axum::http::Uri) -> GatewayError {
    GatewayError::NotFound(uri.path().to_string())
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/label", post(submit_label))
        .route("/sessions/{id}/auto", post(auto_label))
        .route("/sessions/{id}/curve", get(curve))
        .route("/sessions/{id}/export", get(export))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(registry)
}
