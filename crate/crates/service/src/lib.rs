//! HTTP API over the engine. Turns stream as newline-delimited JSON
//! (`application/x-ndjson`), one `TurnEvent` per line.
//!
//! A turn runs on the blocking pool and always runs to completion: if the
//! client goes away mid-stream the remaining events are dropped but the
//! turn's records still land in memory.

use std::convert::Infallible;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cogsearch_core::engine::{Engine, EngineError, TurnEvent, TurnRequest, TurnState};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::mpsc;

pub const NDJSON: &str = "application/x-ndjson";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("turn worker failed: {0}")]
    Worker(String),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::Engine(EngineError::UnknownSession(_)) => StatusCode::NOT_FOUND,
            ServiceError::Engine(EngineError::TurnInProgress | EngineError::NoActiveTurn) => {
                StatusCode::CONFLICT
            }
            ServiceError::Engine(EngineError::UnknownSuggestion(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Engine(EngineError::Memory(_)) | ServiceError::Worker(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ServiceError::Engine(EngineError::UnknownSession(_)) => "unknown_session",
            ServiceError::Engine(EngineError::TurnInProgress) => "turn_in_progress",
            ServiceError::Engine(EngineError::NoActiveTurn) => "no_active_turn",
            ServiceError::Engine(EngineError::UnknownSuggestion(_)) => "unknown_suggestion",
            ServiceError::Engine(EngineError::Memory(_)) => "memory",
            ServiceError::Worker(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code(), "message": self.to_string()});
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetClick {
    pub attribute: String,
    pub bucket: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionAccept {
    pub text: String,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_state))
        .route("/sessions/{id}/turns", post(turn))
        .route("/sessions/{id}/facets", post(facet))
        .route("/sessions/{id}/suggestions/accept", post(accept))
        .with_state(engine)
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "products": engine.catalog().product_count(),
        "sessions": engine.memory().session_ids().len(),
    }))
}

async fn create_session(State(engine): State<Arc<Engine>>) -> (StatusCode, Json<SessionCreated>) {
    let session_id = engine.create_session();
    (StatusCode::CREATED, Json(SessionCreated { session_id }))
}

/// Latest stored turn state; `null` before the first turn.
async fn session_state(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> Result<Json<Option<TurnState>>, ServiceError> {
    if !engine.has_session(&id) {
        return Err(EngineError::UnknownSession(id).into());
    }
    Ok(Json(engine.latest_state(&id)))
}

async fn turn(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(req): Json<TurnRequest>,
) -> Result<Response, ServiceError> {
    stream(engine, move |e, sink| e.run_turn(&id, &req, sink)).await
}

async fn facet(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(req): Json<FacetClick>,
) -> Result<Response, ServiceError> {
    stream(engine, move |e, sink| {
        e.click_facet(&id, &req.attribute, &req.bucket, sink)
    })
    .await
}

async fn accept(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(req): Json<SuggestionAccept>,
) -> Result<Response, ServiceError> {
    stream(engine, move |e, sink| {
        e.accept_suggestion(&id, &req.text, sink)
    })
    .await
}

type EngineCall =
    dyn FnOnce(&Engine, &mut dyn FnMut(TurnEvent)) -> Result<Option<TurnState>, EngineError> + Send;

/// Runs `call` on the blocking pool. Errors raised before the first event
/// become a plain status response; once an event exists the response is a
/// stream, and the call keeps running even if nobody reads it.
async fn stream<F>(engine: Arc<Engine>, call: F) -> Result<Response, ServiceError>
where
    F: FnOnce(&Engine, &mut dyn FnMut(TurnEvent)) -> Result<Option<TurnState>, EngineError>
        + Send
        + 'static,
{
    let call: Box<EngineCall> = Box::new(call);
    let (tx, mut rx) = mpsc::unbounded_channel::<TurnEvent>();
    let worker = tokio::task::spawn_blocking(move || {
        call(&engine, &mut |ev| {
            // a closed receiver means the client left; keep going
            let _ = tx.send(ev);
        })
    });
    let Some(first) = rx.recv().await else {
        return match worker.await {
            Ok(Err(e)) => Err(e.into()),
            Ok(Ok(_)) => Err(ServiceError::Worker("turn produced no events".into())),
            Err(e) => Err(ServiceError::Worker(e.to_string())),
        };
    };
    tokio::spawn(async move {
        match worker.await {
            Ok(Err(e)) => log::warn!("turn failed after streaming began: {e}"),
            Err(e) => log::error!("turn worker panicked: {e}"),
            Ok(Ok(_)) => {}
        }
    });
    let body = futures::stream::unfold((Some(first), rx), |(pending, mut rx)| async move {
        let ev = match pending {
            Some(ev) => ev,
            None => rx.recv().await?,
        };
        Some((Ok::<_, Infallible>(line(&ev)), (None, rx)))
    });
    Ok(([(header::CONTENT_TYPE, NDJSON)], Body::from_stream(body)).into_response())
}

fn line(ev: &TurnEvent) -> Bytes {
    let mut buf = serde_json::to_vec(ev).expect("events serialize");
    buf.push(b'\n');
    Bytes::from(buf)
}

/// Serves until `shutdown` resolves, then writes a memory snapshot if a path
/// was given.
pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: Arc<Engine>,
    snapshot: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(engine.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    if let Some(path) = snapshot {
        engine
            .memory()
            .snapshot(&path)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        log::info!("memory snapshot written to {}", path.display());
    }
    Ok(())
}
