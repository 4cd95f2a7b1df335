//! JSON API for the monitoring dashboard, plus static file serving.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::linkfilter::is_valid_domain;
use crate::orchestrator::{Harvester, IterationReport, OrchestratorError, ProgressSnapshot};
use crate::store::{DomainSort, Store, StoreCounts, StoreError};

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum IterationState {
    Running { started_at: DateTime<Utc> },
    Done { report: Box<IterationReport> },
    Failed { error: String },
}

pub struct AppState {
    pub store: Arc<Store>,
    pub harvester: Arc<Harvester>,
    jobs: Mutex<BTreeMap<u64, IterationState>>,
    cancel: Mutex<Option<Arc<AtomicBool>>>,
}

impl AppState {
    pub fn new(harvester: Arc<Harvester>) -> Arc<Self> {
        Arc::new(Self {
            store: harvester.store.clone(),
            harvester,
            jobs: Mutex::new(BTreeMap::new()),
            cancel: Mutex::new(None),
        })
    }

    fn iteration(&self, id: u64) -> Option<IterationState> {
        if let Some(s) = self.jobs.lock().get(&id) {
            return Some(s.clone());
        }
        self.harvester
            .reports()
            .into_iter()
            .find(|r| r.id == id)
            .map(|r| IterationState::Done { report: Box::new(r) })
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidDomain(_) => ApiError(StatusCode::BAD_REQUEST, e.to_string()),
            _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/status", get(status))
        .route("/api/domains", get(domains))
        .route("/api/blacklist", get(blacklist_list).post(blacklist_add))
        .route("/api/sentences", get(sentences))
        .route("/api/iterations", get(list_iterations).post(start_iteration))
        .route("/api/iterations/{id}", get(get_iteration))
        .route("/api/iterations/cancel", post(cancel_iteration))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, state, static_dir).await
}

pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

/// Runs [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(addr: SocketAddr, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(addr, state, static_dir))
}

#[derive(Serialize)]
struct StatusBody {
    /// `idle` or `running`.
    state: &'static str,
    current_iteration: Option<u64>,
    /// Pending tasks in the store.
    queue_depth: usize,
    /// Same object as `crawl` in `stats --json`.
    counts: StoreCounts,
    sentences_per_minute: f64,
    /// Worker threads of the running crawl and pages in flight.
    workers: usize,
    in_flight: u64,
    progress: ProgressSnapshot,
    last_iteration: Option<IterationReport>,
}

async fn status(State(s): State<Arc<AppState>>) -> Json<StatusBody> {
    let running = s.harvester.running();
    let counts = s.store.counts();
    let progress = s.harvester.progress.snapshot();
    Json(StatusBody {
        state: if running.is_some() { "running" } else { "idle" },
        current_iteration: running,
        queue_depth: counts.pending,
        counts,
        sentences_per_minute: if running.is_some() {
            progress.sentences_per_minute
        } else {
            0.0
        },
        workers: if running.is_some() {
            progress.workers as usize
        } else {
            0
        },
        in_flight: progress.in_flight,
        progress,
        last_iteration: s.harvester.reports().pop(),
    })
}

#[derive(Deserialize)]
struct DomainsQuery {
    sort: Option<String>,
    limit: Option<usize>,
}

async fn domains(State(s): State<Arc<AppState>>, Query(q): Query<DomainsQuery>) -> ApiResult<impl IntoResponse> {
    let sort = match q.sort.as_deref() {
        None => DomainSort::default(),
        Some(v) => v.parse().map_err(|e: String| ApiError(StatusCode::BAD_REQUEST, e))?,
    };
    let mut rows = s.store.domains(sort);
    if let Some(l) = q.limit {
        rows.truncate(l);
    }
    Ok(Json(rows))
}

#[derive(Deserialize)]
struct BlacklistBody {
    domain: String,
}

async fn blacklist_list(State(s): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(s.store.blacklisted_domains())
}

async fn blacklist_add(
    State(s): State<Arc<AppState>>,
    body: Result<Json<BlacklistBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(b) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let domain = b.domain.trim().to_ascii_lowercase();
    if !is_valid_domain(&domain) {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("invalid domain {:?}", b.domain),
        ));
    }
    let out = s.store.blacklist_domain(&domain)?;
    Ok(Json(json!({
        "domain": domain,
        "newly_added": out.newly_added,
        "cancelled_tasks": out.cancelled_tasks,
    })))
}

#[derive(Deserialize)]
struct SentencesQuery {
    min_proba: Option<f64>,
    domain: Option<String>,
    limit: Option<usize>,
}

async fn sentences(State(s): State<Arc<AppState>>, Query(q): Query<SentencesQuery>) -> ApiResult<impl IntoResponse> {
    if q.min_proba.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "min_proba must lie in [0, 1]".into()));
    }
    let limit = q.limit.unwrap_or(100).min(10_000);
    Ok(Json(s.store.query_sentences(q.min_proba, q.domain.as_deref(), limit)))
}

#[derive(Deserialize, Default)]
struct StartBody {
    #[serde(alias = "seeds")]
    seed_count: Option<usize>,
}

async fn start_iteration(
    State(s): State<Arc<AppState>>,
    body: Option<Json<StartBody>>,
) -> ApiResult<impl IntoResponse> {
    let seeds = body.map(|b| b.0).unwrap_or_default().seed_count.unwrap_or(10);
    let id = match s.harvester.begin() {
        Ok(id) => id,
        Err(OrchestratorError::Busy) => {
            return Err(ApiError(StatusCode::CONFLICT, "an iteration is already running".into()));
        }
        Err(e) => return Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    };
    let cancel = Arc::new(AtomicBool::new(false));
    *s.cancel.lock() = Some(cancel.clone());
    s.jobs
        .lock()
        .insert(id, IterationState::Running { started_at: Utc::now() });
    let state = s.clone();
    // The crawler uses a blocking HTTP client, which must stay off the async runtime.
    std::thread::spawn(move || {
        let result = state.harvester.run_reserved(id, seeds, cancel);
        let done = match result {
            Ok(report) => IterationState::Done {
                report: Box::new(report),
            },
            Err(e) => IterationState::Failed { error: e.to_string() },
        };
        state.jobs.lock().insert(id, done);
        state.harvester.end();
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

async fn cancel_iteration(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    match (s.harvester.running(), s.cancel.lock().as_ref()) {
        (Some(id), Some(flag)) => {
            flag.store(true, Ordering::SeqCst);
            (StatusCode::ACCEPTED, Json(json!({ "id": id })))
        }
        _ => (
            StatusCode::NOT_FOUND,
            Json(json!({ "error": "no iteration is running" })),
        ),
    }
}

async fn list_iterations(State(s): State<Arc<AppState>>) -> Json<Vec<IterationReport>> {
    Json(s.harvester.reports())
}

async fn get_iteration(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<impl IntoResponse> {
    let live = (s.harvester.running() == Some(id)).then(|| s.harvester.progress.snapshot());
    s.iteration(id)
        .map(|st| Json(json!({ "id": id, "status": st, "progress": live })))
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no iteration {id}")))
}
