//! Batch grading over HTTP: submit a batch, poll it, fetch per-item results.
//!
//! Jobs are journaled to disk before they are acknowledged and resumed when
//! the service restarts.

mod grader;
mod store;

pub use grader::Grader;
pub use store::{Job, JobState, JobStore, JobSummary, Outcome, StoreError};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use grader_core::data::{validate_submission, ItemRecord};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;

/// The `service` section of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub port: u16,
    pub max_batch: usize,
    pub data_dir: String,
    pub checkpoint: Option<String>,
    /// Jobs processed at the same time.
    pub workers: usize,
    /// Items of one job in flight at the same time.
    pub item_parallelism: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: 8080, max_batch: 1000, data_dir: "jobs".into(), checkpoint: None, workers: 2, item_parallelism: 20 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub items: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError(status, ErrorBody { error: error.into(), details: Vec::new() })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::NotReady { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

struct Shared {
    config: ServiceConfig,
    store: Arc<JobStore>,
    grader: Option<Arc<Grader>>,
    queue: mpsc::UnboundedSender<String>,
}

/// A running job store plus worker pool. Dropping it does not stop the
/// workers; call [`Service::shutdown`].
pub struct Service {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl Service {
    /// Opens the job store, starts the workers and requeues unfinished jobs.
    /// Without a grader, submissions are refused and stored jobs wait.
    pub fn start(config: ServiceConfig, grader: Option<Grader>) -> Result<Self, StoreError> {
        let store = Arc::new(JobStore::open(&config.data_dir)?);
        let (tx, rx) = mpsc::unbounded_channel();
        let grader = grader.map(Arc::new);
        let rx = Arc::new(Mutex::new(rx));
        let workers = match &grader {
            Some(g) => (0..config.workers.max(1))
                .map(|_| tokio::spawn(worker(rx.clone(), store.clone(), g.clone(), config.item_parallelism.max(1))))
                .collect(),
            None => Vec::new(),
        };
        let unfinished = store.unfinished();
        if !unfinished.is_empty() {
            if grader.is_some() {
                log::info!("resuming {} unfinished job(s)", unfinished.len());
            } else {
                log::warn!("{} unfinished job(s) wait for a checkpoint", unfinished.len());
            }
        }
        for id in unfinished {
            tx.send(id).expect("receiver alive");
        }
        Ok(Self { shared: Arc::new(Shared { config, store, grader, queue: tx }), workers })
    }

    pub fn store(&self) -> &JobStore {
        &self.shared.store
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/v1/batches", post(submit))
            .route("/v1/batches/{id}", get(status))
            .route("/v1/batches/{id}/results", get(results))
            .with_state(self.shared.clone())
    }

    /// Serves on `0.0.0.0:{port}` until the process ends.
    pub async fn serve(&self) -> std::io::Result<()> {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", self.shared.config.port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, self.router()).await
    }

    /// Stops the workers at once, as a crash would. Journaled progress survives.
    pub fn shutdown(self) {
        for w in self.workers {
            w.abort();
        }
    }
}

async fn worker(rx: Arc<Mutex<mpsc::UnboundedReceiver<String>>>, store: Arc<JobStore>, grader: Arc<Grader>, width: usize) {
    loop {
        let next = rx.lock().await.recv().await;
        let Some(id) = next else { return };
        if let Err(e) = run_job(&id, &store, &grader, width).await {
            log::error!("job {id}: {e}");
            let _ = store.fail(&id, &e.to_string());
        }
    }
}

async fn run_job(id: &str, store: &JobStore, grader: &Grader, width: usize) -> Result<(), StoreError> {
    store.mark_running(id)?;
    let remaining = store.remaining(id)?;
    let mut outcomes = futures::stream::iter(remaining)
        .map(|(i, item)| async move { (i, grader.grade(&item).await) })
        .buffer_unordered(width);
    while let Some((i, outcome)) = outcomes.next().await {
        store.record_outcome(id, i, outcome)?;
    }
    let state = store.finish(id)?;
    log::info!("job {id} {state:?}");
    Ok(())
}

async fn submit(State(s): State<Arc<Shared>>, body: Bytes) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let req: SubmitRequest = serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))?;
    if req.items.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "batch has no items"));
    }
    if req.items.len() > s.config.max_batch {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("batch of {} exceeds the limit of {}", req.items.len(), s.config.max_batch)));
    }
    let mut items = Vec::with_capacity(req.items.len());
    let mut details = Vec::new();
    for (i, raw) in req.items.into_iter().enumerate() {
        let checked = serde_json::from_value::<ItemRecord>(raw)
            .map_err(|e| e.to_string())
            .and_then(|r| validate_submission(r).map_err(|e| e.to_string()));
        match checked {
            Ok(item) => items.push(item),
            Err(e) => details.push(format!("item {i}: {e}")),
        }
    }
    if !details.is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, ErrorBody { error: "invalid items".into(), details }));
    }
    if s.grader.is_none() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no checkpoint loaded"));
    }
    let id = s.store.create(items)?;
    s.queue.send(id.clone()).map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "worker queue closed"))?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_id": id }))))
}

async fn status(State(s): State<Arc<Shared>>, Path(id): Path<String>) -> Result<Json<JobSummary>, ApiError> {
    Ok(Json(s.store.summary(&id)?))
}

async fn results(State(s): State<Arc<Shared>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let outcomes = s.store.results(&id)?;
    Ok(Json(serde_json::json!({ "job_id": id, "outcomes": outcomes })))
}
