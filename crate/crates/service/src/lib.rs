//! HTTP control plane for live trials.
//!
//! Every route lives under `/api`. Progress is pushed as server-sent events
//! on `/api/trials/{id}/events`: `progress` events at most every 250 ms,
//! then one `terminal` event before the stream closes.

mod geometry;
mod trial;

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tailseek_core::experiment::{Experiment, ExperimentConfig};
use tailseek_core::Error;

pub use geometry::{downsample, Ellipse};
pub use trial::{
    ClusterInfo, EventDocument, Progress, Selection, SnapshotView, StateDocument, Status, TrialHandle, ValidityEvent,
    MAX_SCATTER_POINTS,
};

/// Minimum spacing of pushed progress events.
pub const EVENT_INTERVAL: Duration = Duration::from_millis(250);
pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8715;

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    base_dir: PathBuf,
    trials: RwLock<HashMap<String, Arc<TrialHandle>>>,
    counter: AtomicU64,
}

impl AppState {
    /// Relative paths in submitted configs resolve against `base_dir`.
    pub fn new(base_dir: PathBuf) -> Self {
        Self { inner: Arc::new(Inner { base_dir, trials: RwLock::default(), counter: AtomicU64::new(0) }) }
    }

    pub fn trial(&self, id: &str) -> Option<Arc<TrialHandle>> {
        self.inner.trials.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown trial {id}"))
}

fn refused(r: trial::Refusal) -> ApiError {
    match r {
        trial::Refusal::Illegal(s) => ApiError(StatusCode::CONFLICT, format!("illegal transition from {s:?}").to_lowercase()),
        trial::Refusal::Unprocessable(m) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, m),
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/trials", post(create_trial).get(list_trials))
        .route("/api/trials/{id}/start", post(start))
        .route("/api/trials/{id}/pause", post(pause))
        .route("/api/trials/{id}/resume", post(resume))
        .route("/api/trials/{id}/stop", post(stop))
        .route("/api/trials/{id}/state", get(state_doc))
        .route("/api/trials/{id}/negative-clusters", post(add_cluster))
        .route("/api/trials/{id}/events", get(events))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub host: String,
    pub port: u16,
    pub base_dir: PathBuf,
    /// Directory of a built UI bundle served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { host: DEFAULT_HOST.into(), port: DEFAULT_PORT, base_dir: PathBuf::from("."), ui_dir: None }
    }
}

pub fn app(opts: &ServeOptions) -> Router {
    let r = router(AppState::new(opts.base_dir.clone()));
    match &opts.ui_dir {
        Some(dir) => r.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => r,
    }
}

/// Binds and serves until the process ends. `on_bound` receives the
/// actual address, which matters when port 0 was requested.
pub async fn serve(opts: ServeOptions, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((opts.host.as_str(), opts.port)).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, app(&opts)).await
}

#[derive(Serialize)]
struct Created {
    trial_id: String,
}

async fn create_trial(State(app): State<AppState>, body: String) -> ApiResult<(StatusCode, Json<Created>)> {
    let inner = Arc::clone(&app.inner);
    let handle = tokio::task::spawn_blocking(move || {
        let cfg = ExperimentConfig::from_json(&body, &inner.base_dir).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
        let exp = Experiment::load(&cfg).map_err(|e| match e {
            Error::Config(m) => ApiError(StatusCode::CONFLICT, m),
            other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        })?;
        let n = inner.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!("t-{n}");
        let dir = cfg.output_dir().join("service").join(&id);
        let handle = TrialHandle::new(id.clone(), exp, dir).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        inner.trials.write().unwrap_or_else(|e| e.into_inner()).insert(id, Arc::clone(&handle));
        Ok::<_, ApiError>(handle)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(Created { trial_id: handle.id.clone() })))
}

#[derive(Serialize)]
struct Listed {
    trial_id: String,
    status: Status,
}

async fn list_trials(State(app): State<AppState>) -> Json<Vec<Listed>> {
    let trials = app.inner.trials.read().unwrap_or_else(|e| e.into_inner());
    let mut out: Vec<Listed> = trials.values().map(|t| Listed { trial_id: t.id.clone(), status: t.status() }).collect();
    out.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Json(out)
}

fn handle(app: &AppState, id: &str) -> ApiResult<Arc<TrialHandle>> {
    app.trial(id).ok_or_else(|| not_found(id))
}

async fn start(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = handle(&app, &id)?.start().map_err(refused)?;
    Ok(Json(json!({ "status": s })))
}

async fn pause(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = handle(&app, &id)?.pause().map_err(refused)?;
    Ok(Json(json!({ "status": s })))
}

async fn resume(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = handle(&app, &id)?.resume().map_err(refused)?;
    Ok(Json(json!({ "status": s })))
}

/// Waits for the worker to flush its record before answering.
async fn stop(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let h = handle(&app, &id)?;
    let mut rx = h.subscribe();
    h.stop().map_err(refused)?;
    let done = tokio::time::timeout(Duration::from_secs(60), rx.wait_for(|e| e.terminal)).await;
    if !matches!(done, Ok(Ok(_))) {
        return Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, "trial did not terminate".into()));
    }
    let st = h.state();
    Ok(Json(json!({ "status": st.status, "termination": st.termination, "record_path": st.record_path })))
}

async fn state_doc(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StateDocument>> {
    Ok(Json(handle(&app, &id)?.state()))
}

/// Exactly one of `sample_ids` and `ellipse`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterRequest {
    #[serde(default)]
    sample_ids: Option<Vec<usize>>,
    #[serde(default)]
    ellipse: Option<Ellipse>,
    #[serde(default)]
    alpha: Option<f64>,
}

async fn add_cluster(State(app): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Json<ClusterInfo>> {
    let h = handle(&app, &id)?;
    let req: ClusterRequest = serde_json::from_str(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let sel = match (req.sample_ids, req.ellipse) {
        (Some(ids), None) => Selection::SampleIds(ids),
        (None, Some(e)) => Selection::Ellipse(e),
        _ => return Err(ApiError(StatusCode::BAD_REQUEST, "give exactly one of sample_ids and ellipse".into())),
    };
    Ok(Json(h.add_cluster(sel, req.alpha).map_err(refused)?))
}

fn to_event(doc: &EventDocument) -> Event {
    let name = if doc.terminal { "terminal" } else { "progress" };
    Event::default().event(name).json_data(doc).unwrap_or_else(|_| Event::default().event(name))
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let rx = handle(&app, &id)?.subscribe();
    let s = stream::unfold((rx, true, false), |(mut rx, first, done)| async move {
        if done {
            return None;
        }
        if !first {
            tokio::time::sleep(EVENT_INTERVAL).await;
            if rx.changed().await.is_err() {
                let doc = rx.borrow().clone();
                return Some((Ok(to_event(&EventDocument { terminal: true, ..doc })), (rx, false, true)));
            }
        }
        let doc = rx.borrow_and_update().clone();
        let terminal = doc.terminal;
        Some((Ok(to_event(&doc)), (rx, false, terminal)))
    });
    Ok(Sse::new(s).keep_alive(KeepAlive::default()))
}
