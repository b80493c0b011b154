//! HTTP backend for annotating events: serves downsampled power series of
//! the recordings in a dataset directory and keeps human-entered labels in
//! an append-only log.
//!
//! Endpoints:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | `{"status":"ok"}` |
//! | GET | `/channels` | recordings in the dataset |
//! | GET | `/series?channel&start&end&max_points` | min/max/mean power tile |
//! | GET | `/annotations?channel&start&end` | live labels |
//! | PUT | `/annotations` | insert or update, JSON [`PutAnnotation`] body |
//! | DELETE | `/annotations?channel&time_s&base_revision` | tombstone a label |
//! | GET | `/export.csv` | labels as a ground-truth CSV |
//!
//! Times are float seconds from the recording start.

mod dataset;
mod store;

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::RwLock;

pub use dataset::{Channel, ChannelInfo, Dataset, SeriesPoint, SeriesTile};
pub use store::{AnnotationRecord, AnnotationStore, PutAnnotation, StoreError};

pub const DEFAULT_MAX_POINTS: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub struct AppState {
    pub dataset: Dataset,
    pub store: RwLock<AnnotationStore>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(dataset: Dataset, store: AnnotationStore) -> SharedState {
        Arc::new(Self {
            dataset,
            store: RwLock::new(store),
        })
    }
}

#[derive(Deserialize)]
struct SeriesQuery {
    channel: String,
    start: f64,
    end: f64,
    max_points: Option<usize>,
}

#[derive(Deserialize)]
struct ListQuery {
    channel: Option<String>,
    start: Option<f64>,
    end: Option<f64>,
}

#[derive(Deserialize)]
struct DeleteQuery {
    channel: String,
    time_s: f64,
    base_revision: Option<u64>,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn channels(State(s): State<SharedState>) -> Json<Vec<ChannelInfo>> {
    Json(s.dataset.channels.values().map(|c| c.info.clone()).collect())
}

async fn series(State(s): State<SharedState>, Query(q): Query<SeriesQuery>) -> Result<Json<SeriesTile>, ApiError> {
    let ch = s.dataset.channel(&q.channel)?;
    Ok(Json(ch.series(q.start, q.end, q.max_points.unwrap_or(DEFAULT_MAX_POINTS))?))
}

async fn list(State(s): State<SharedState>, Query(q): Query<ListQuery>) -> Result<Json<Vec<AnnotationRecord>>, ApiError> {
    if let Some(c) = &q.channel {
        s.dataset.channel(c)?;
    }
    let store = s.store.read().await;
    Ok(Json(store.list(
        q.channel.as_deref(),
        q.start.unwrap_or(f64::NEG_INFINITY),
        q.end.unwrap_or(f64::INFINITY),
    )))
}

async fn put(State(s): State<SharedState>, Json(req): Json<PutAnnotation>) -> Result<Json<AnnotationRecord>, ApiError> {
    let ch = s.dataset.channel(&req.channel_id)?;
    if !(req.time_s >= 0.0 && req.time_s <= ch.info.duration_s) {
        return Err(ApiError::BadRequest(format!(
            "time {} s lies outside recording [0, {}]",
            req.time_s, ch.info.duration_s
        )));
    }
    if req.appliance.contains(['\n', '\r']) || req.channel_id.contains(['\n', '\r']) {
        return Err(ApiError::BadRequest("labels must be single-line".into()));
    }
    let mut store = s.store.write().await;
    Ok(Json(store.put(req)?))
}

async fn delete(State(s): State<SharedState>, Query(q): Query<DeleteQuery>) -> Result<Json<AnnotationRecord>, ApiError> {
    s.dataset.channel(&q.channel)?;
    let mut store = s.store.write().await;
    Ok(Json(store.delete(&q.channel, q.time_s, q.base_revision)?))
}

async fn export(State(s): State<SharedState>) -> Result<Response, ApiError> {
    let gt = s.store.read().await.ground_truth();
    let mut buf = Vec::new();
    gt.write_csv(&mut buf).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response())
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/channels", get(channels))
        .route("/series", get(series))
        .route("/annotations", get(list).put(put).delete(delete))
        .route("/export.csv", get(export))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: SharedState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
