//! HTTP front end for scoring and threshold-filtering candidate summaries.
//!
//! Routes:
//!
//! * `POST /v1/score`  `{"text", "candidate"}`
//! * `POST /v1/filter` `{"text", "candidates", "threshold"?, "max_keep"?}`
//! * `GET  /v1/health`
//!
//! Errors come back as `{"error": {"code": "...", "message": "..."}}` with
//! status 400 for bad input and 502 when the embedding backend fails.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use noir_core::corpus::ScoreError;
use noir_core::{PairScore, Scorer};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Used by `/v1/filter` when the request omits `threshold`.
    pub default_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { default_threshold: 0.0 }
    }
}

pub struct AppState {
    scorer: Scorer,
    config: ServiceConfig,
    backend_id: String,
}

impl AppState {
    pub fn new(scorer: Scorer, config: ServiceConfig) -> Self {
        let backend_id = scorer.backend().profile().backend_id;
        Self {
            scorer,
            config,
            backend_id,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens_text: u64,
    pub tokens_candidate: u64,
    pub ratio: f64,
    pub similarity: f64,
    pub similarity_clamped: f64,
    pub noir: f64,
    pub saturated: bool,
}

impl From<PairScore> for ScoreResponse {
    fn from(s: PairScore) -> Self {
        Self {
            tokens_text: s.tokens_parent,
            tokens_candidate: s.tokens_candidate,
            ratio: s.ratio().value(),
            similarity: s.similarity.raw(),
            similarity_clamped: s.similarity.clamped(),
            noir: s.noir.value,
            saturated: s.noir.saturated,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct FilterRequest {
    pub text: String,
    pub candidates: Vec<String>,
    pub threshold: Option<f64>,
    pub max_keep: Option<usize>,
}

/// Minimum score and optional cap on the number of survivors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPolicy {
    pub threshold: f64,
    pub max_keep: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kept {
    pub index: usize,
    pub candidate: String,
    pub noir: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResponse {
    pub kept: Vec<Kept>,
}

/// Keep candidates scoring at least `threshold`, best first; ties keep input order.
pub fn apply_policy(candidates: &[String], scores: &[PairScore], policy: FilterPolicy) -> Vec<Kept> {
    let mut kept: Vec<Kept> = candidates
        .iter()
        .zip(scores)
        .enumerate()
        .filter(|(_, (_, s))| s.noir.value >= policy.threshold)
        .map(|(index, (c, s))| Kept {
            index,
            candidate: c.clone(),
            noir: s.noir.value,
            similarity: s.similarity.raw(),
        })
        .collect();
    kept.sort_by(|a, b| b.noir.total_cmp(&a.noir));
    if let Some(k) = policy.max_keep {
        kept.truncate(k);
    }
    kept
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        let (status, code) = match &e {
            e if e.is_backend() => (StatusCode::BAD_GATEWAY, "embedding_backend_unavailable"),
            ScoreError::Embedding { .. } => (StatusCode::BAD_GATEWAY, "embedding_failed"),
            _ => (StatusCode::BAD_REQUEST, "invalid_input"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request("invalid_body", e.body_text())
    }
}

fn require_text(field: &str, value: &str) -> Result<(), ApiError> {
    if value.trim().is_empty() {
        return Err(ApiError::bad_request("empty_field", format!("`{field}` must be nonempty")));
    }
    Ok(())
}

async fn run_blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ScoreError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

async fn score(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ScoreRequest>, JsonRejection>,
) -> Result<Json<ScoreResponse>, ApiError> {
    let Json(req) = body?;
    require_text("text", &req.text)?;
    require_text("candidate", &req.candidate)?;
    let s = state.clone();
    let result = run_blocking(move || s.scorer.score_texts(&req.text, &req.candidate)).await?;
    Ok(Json(result.into()))
}

async fn filter(
    State(state): State<Arc<AppState>>,
    body: Result<Json<FilterRequest>, JsonRejection>,
) -> Result<Json<FilterResponse>, ApiError> {
    let Json(req) = body?;
    require_text("text", &req.text)?;
    if req.candidates.is_empty() {
        return Err(ApiError::bad_request("empty_candidates", "`candidates` must be nonempty"));
    }
    for (i, c) in req.candidates.iter().enumerate() {
        require_text(&format!("candidates[{i}]"), c)?;
    }
    let policy = FilterPolicy {
        threshold: req.threshold.unwrap_or(state.config.default_threshold),
        max_keep: req.max_keep,
    };
    if !policy.threshold.is_finite() {
        return Err(ApiError::bad_request("invalid_threshold", "threshold must be finite"));
    }
    let s = state.clone();
    let candidates = req.candidates;
    let (candidates, scores) = run_blocking(move || {
        let scores = s.scorer.score_candidates(&req.text, &candidates)?;
        Ok((candidates, scores))
    })
    .await?;
    Ok(Json(FilterResponse {
        kept: apply_policy(&candidates, &scores, policy),
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "embedder": state.backend_id}))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/filter", post(filter))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Serve on an already bound listener until the task is dropped.
pub async fn serve_listener(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
