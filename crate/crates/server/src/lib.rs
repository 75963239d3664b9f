//! HTTP annotation service.
//!
//! Annotators work through a server-ordered queue of sampled spans, one
//! active query at a time. Labels go into the shared pool that the next
//! retraining cycle reads.

mod error;
mod session;
mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

pub use error::{ApiError, ApiResult};
pub use session::{build_queue, session_stats, Session, SessionMode, SessionStats, Submission, THROUGHPUT_WINDOW_MINUTES};
pub use state::{
    AppState, Clock, CreateSession, CycleStatus, DocumentPayload, LabelAck, LabelRequest, QueryPayload, SessionCreated,
    StatsReport, SCHEMA_VERSION,
};

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    schema_version: u32,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
    })
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    let created = state.create_session(req).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn next_query(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(match state.next(&id).await? {
        Some(payload) => Json(payload).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit_label(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<LabelRequest>,
) -> ApiResult<Json<LabelAck>> {
    Ok(Json(state.label(&id, req).await?))
}

async fn stats(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StatsReport>> {
    Ok(Json(state.stats(&id).await?))
}

async fn document(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DocumentPayload>> {
    Ok(Json(state.document(&id)?))
}

async fn cycle_status(State(state): State<AppState>) -> Json<CycleStatus> {
    Json(state.cycle_status())
}

async fn advance(State(state): State<AppState>) -> ApiResult<Response> {
    Ok((StatusCode::ACCEPTED, Json(state.advance()?)).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}/next", get(next_query))
        .route("/session/{id}/label", post(submit_label))
        .route("/session/{id}/stats", get(stats))
        .route("/document/{id}", get(document))
        .route("/cycle", get(cycle_status))
        .route("/cycle/advance", post(advance))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },

    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Serves until `shutdown` resolves, then writes sessions to `log_dir`.
pub async fn serve(
    state: AppState,
    addr: SocketAddr,
    log_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    if let Some(dir) = log_dir {
        state.persist(&dir).await?;
        tracing::info!(dir = %dir.display(), "sessions written");
    }
    Ok(())
}
