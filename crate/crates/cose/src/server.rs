//! HTTP service over a loaded checkpoint.
//!
//! Request and response strokes use the NDJSON interchange layout: a stroke
//! is a list of `[x, y]` or `[x, y, t]` points.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cose_core::checkpoint::{checkpoint_id, resolve_path, Checkpoint};
use cose_core::infer::{rollout, suggest, RolloutOptions, SuggestOptions, Suggestions};
use cose_core::ink::{drawing_from_arrays, Stroke};
use cose_core::{CoseModel, Error};

pub struct Loaded {
    pub model: CoseModel,
    pub checkpoint_id: String,
}

impl Loaded {
    pub fn from_file(path: &Path) -> cose_core::Result<Self> {
        let bytes = std::fs::read(resolve_path(path))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { model: Checkpoint::from_json(text)?.model()?, checkpoint_id: checkpoint_id(&bytes) })
    }
}

#[derive(Clone)]
pub struct AppState {
    current: Arc<RwLock<Arc<Loaded>>>,
    source: Option<PathBuf>,
}

impl AppState {
    pub fn new(loaded: Loaded, source: Option<PathBuf>) -> Self {
        Self { current: Arc::new(RwLock::new(Arc::new(loaded))), source }
    }

    pub fn open(path: &Path) -> cose_core::Result<Self> {
        Ok(Self::new(Loaded::from_file(path)?, Some(path.to_path_buf())))
    }

    fn snapshot(&self) -> Arc<Loaded> {
        self.current.read().expect("weights lock").clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/suggest", post(suggest_handler))
        .route("/rollout", post(rollout_handler))
        .route("/reload", post(reload))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. }
            | Error::EmptyStroke { .. }
            | Error::InvalidInput(_)
            | Error::EmptyContext
            | Error::CurveParameter(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(message) => (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": message }))).into_response(),
            ApiError::Internal(detail) => {
                let id = uuid::Uuid::new_v4().to_string();
                tracing::error!(%id, %detail, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, Json(serde_json::json!({ "error": "internal error", "id": id })))
                    .into_response()
            }
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request: {e}")))
}

fn parse_strokes(strokes: Vec<Vec<Vec<f64>>>) -> Result<Vec<Stroke>, ApiError> {
    if strokes.is_empty() {
        return Err(Error::EmptyContext.into());
    }
    Ok(drawing_from_arrays(strokes, 1)?.into_strokes())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoint_id: String,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), checkpoint_id: state.snapshot().checkpoint_id.clone() })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub strokes: Vec<Vec<Vec<f64>>>,
    #[serde(flatten)]
    pub options: SuggestOptions,
}

async fn suggest_handler(State(state): State<AppState>, body: Bytes) -> Result<Json<Suggestions>, ApiError> {
    let req: SuggestRequest = parse_body(&body)?;
    let strokes = parse_strokes(req.strokes)?;
    let loaded = state.snapshot();
    let out = blocking(move || Ok(suggest(&loaded.model, &strokes, &req.options)?)).await?;
    Ok(Json(out))
}

fn default_steps() -> usize {
    RolloutOptions::default().steps
}

fn default_temperature() -> f64 {
    1.0
}

fn default_points() -> usize {
    RolloutOptions::default().n_points
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RolloutRequest {
    pub strokes: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_points")]
    pub n_points: usize,
}

/// The completed drawing; `generated[i]` is 0 for input strokes and the
/// rollout step that produced stroke `i` otherwise.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub strokes: Vec<Vec<[f64; 2]>>,
    pub generated: Vec<usize>,
}

async fn rollout_handler(State(state): State<AppState>, body: Bytes) -> Result<Json<RolloutResponse>, ApiError> {
    let req: RolloutRequest = parse_body(&body)?;
    let strokes = parse_strokes(req.strokes)?;
    let opts = RolloutOptions {
        steps: req.steps,
        temperature: req.temperature,
        seed: req.seed,
        n_points: req.n_points,
        ..RolloutOptions::default()
    };
    let loaded = state.snapshot();
    let out = blocking(move || Ok(rollout(&loaded.model, &strokes, &opts)?)).await?;
    Ok(Json(RolloutResponse {
        generated: out.iter().map(|s| s.step).collect(),
        strokes: out.into_iter().map(|s| s.points).collect(),
    }))
}

/// Re-reads the checkpoint the service was started from and swaps it in.
async fn reload(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let Some(path) = state.source.clone() else {
        return Err(ApiError::BadRequest("service was not started from a checkpoint file".into()));
    };
    let loaded = blocking(move || Ok(Loaded::from_file(&path)?)).await?;
    let id = loaded.checkpoint_id.clone();
    *state.current.write().expect("weights lock") = Arc::new(loaded);
    tracing::info!(checkpoint_id = %id, "reloaded checkpoint");
    Ok(Json(Health { status: "ok".into(), checkpoint_id: id }))
}

pub async fn serve(state: AppState, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
