//! HTTP carrier for a [`LabelSession`]: a browser (or any client) fetches
//! pending memory queries and posts labels while the pipeline waits.
//!
//! | method | path                        | body / reply                                   |
//! |--------|-----------------------------|------------------------------------------------|
//! | GET    | `/session`                  | `{id, label_space, budget:{N_L, consumed}, status}` |
//! | GET    | `/queries/pending?limit=k`  | `[{query_id, sample_id, seed, preview_url}]`   |
//! | GET    | `/samples/{id}/preview`     | values as JSON array, or preview file bytes    |
//! | POST   | `/labels`                   | `{query_id, class_index}` → `{accepted, consumed}` |
//! | GET    | `/progress`                 | `{total_queries, answered, per_seed_counts, status}` |
//!
//! Rejected submissions: 404 unknown query, 409 duplicate / over budget /
//! closed session, 422 class out of range.

use std::fs;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labeling::{Answer, LabelProvider, LabelQuery, LabelSession, SessionStatus, SubmitError};

/// A session shared between HTTP handlers and the waiting pipeline.
#[derive(Debug)]
pub struct SharedSession {
    session: Mutex<LabelSession>,
    changed: Condvar,
}

impl SharedSession {
    pub fn new(session: LabelSession) -> Arc<Self> {
        Arc::new(Self {
            session: Mutex::new(session),
            changed: Condvar::new(),
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, LabelSession> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn notify(&self) {
        self.changed.notify_all();
    }

    pub fn abort(&self) {
        self.lock().abort();
        self.notify();
    }

    /// Blocks until every query in `ids` has an answer or the session aborts.
    fn wait_answered(&self, ids: &[String]) -> Result<Vec<usize>> {
        let mut guard = self.lock();
        loop {
            if guard.status() == SessionStatus::Aborted {
                return Err(Error::ProviderRefused("session aborted".into()));
            }
            let answers: Option<Vec<usize>> = ids.iter().map(|q| guard.answer(q)).collect();
            if let Some(a) = answers {
                return Ok(a);
            }
            guard = self.changed.wait(guard).unwrap_or_else(|e| e.into_inner());
        }
    }
}

#[derive(Clone)]
struct AppState {
    shared: Arc<SharedSession>,
    dataset: Arc<Dataset>,
    preview_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PendingParams {
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PendingQuery {
    pub query_id: String,
    pub sample_id: String,
    pub seed: u64,
    pub preview_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub query_id: String,
    pub class_index: usize,
}

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

async fn get_session(State(st): State<AppState>) -> Response {
    let s = st.shared.lock();
    Json(json!({
        "id": s.id(),
        "label_space": s.label_space().classes(),
        "budget": { "N_L": s.limit(), "consumed": s.consumed() },
        "status": s.status(),
    }))
    .into_response()
}

async fn get_pending(State(st): State<AppState>, Query(p): Query<PendingParams>) -> Response {
    let s = st.shared.lock();
    let list: Vec<PendingQuery> = s
        .pending()
        .take(p.limit.unwrap_or(usize::MAX))
        .map(|q| PendingQuery {
            query_id: q.query_id.clone(),
            sample_id: q.sample_id.clone(),
            seed: q.seed,
            preview_url: format!("/samples/{}/preview", q.sample_id),
        })
        .collect();
    Json(list).into_response()
}

fn find_preview_file(dir: &Path, id: &str) -> Option<PathBuf> {
    let entries = fs::read_dir(dir).ok()?;
    let mut hits: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.file_stem().and_then(|s| s.to_str()) == Some(id))
        .collect();
    hits.sort();
    hits.into_iter().next()
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn get_preview(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(index) = st.dataset.index_of(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample `{id}`"));
    };
    if let Some(file) = st.preview_dir.as_deref().and_then(|d| find_preview_file(d, &id)) {
        return match fs::read(&file) {
            Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&file))], bytes).into_response(),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        };
    }
    Json(&st.dataset.sample(index).values).into_response()
}

async fn post_label(State(st): State<AppState>, Json(body): Json<LabelSubmission>) -> Response {
    let result = st.shared.lock().submit(&body.query_id, body.class_index);
    st.shared.notify();
    match result {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => {
            let status = match e {
                SubmitError::UnknownQuery(_) => StatusCode::NOT_FOUND,
                SubmitError::Duplicate(_) | SubmitError::BudgetExhausted(_) | SubmitError::Closed(_) => {
                    StatusCode::CONFLICT
                }
                SubmitError::InvalidClass { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                SubmitError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e)
        }
    }
}

async fn get_progress(State(st): State<AppState>) -> Response {
    Json(st.shared.lock().progress()).into_response()
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/queries/pending", get(get_pending))
        .route("/samples/{id}/preview", get(get_preview))
        .route("/labels", post(post_label))
        .route("/progress", get(get_progress))
        .with_state(state)
}

/// A running service; dropping it shuts the server down.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` and serves the session on a background thread.
pub fn serve_session(
    shared: Arc<SharedSession>,
    dataset: Arc<Dataset>,
    preview_dir: Option<PathBuf>,
    addr: SocketAddr,
) -> Result<ServiceHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let app = router(AppState {
        shared,
        dataset,
        preview_dir,
    });
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_io()
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("label-service".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Provider that publishes queries through the HTTP service and blocks until
/// a client has answered each seed's batch.
pub struct ServiceProvider {
    shared: Arc<SharedSession>,
}

impl ServiceProvider {
    pub fn new(shared: Arc<SharedSession>) -> Self {
        Self { shared }
    }
}

impl LabelProvider for ServiceProvider {
    fn prepare(&mut self, batches: &[Vec<LabelQuery>]) -> Result<()> {
        let mut s = self.shared.lock();
        for b in batches {
            s.register(b)?;
        }
        drop(s);
        self.shared.notify();
        Ok(())
    }

    fn label_batch(&mut self, _: &Dataset, _: u64, queries: &[LabelQuery]) -> Result<Vec<Answer>> {
        self.shared.lock().register(queries)?;
        self.shared.notify();
        let ids: Vec<String> = queries.iter().map(|q| q.query_id.clone()).collect();
        Ok(self
            .shared
            .wait_answered(&ids)?
            .into_iter()
            .map(Answer::Label)
            .collect())
    }
}
