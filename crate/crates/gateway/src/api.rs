//! JSON-over-HTTP session API.
//!
//! Requests against one session serialize through that session's lock.
//! Training and selection run on the blocking pool: the endpoint returns as
//! soon as the job is scheduled and clients poll `GET /sessions/{id}`.

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use agile_core::active_learner::Strategy;
use agile_core::ann_index::NnIndex;
use agile_core::embed_store::{Corpus, ItemRef};
use agile_core::session::{load_session, save_session, ConceptSpec, Phase, RatingInput, Session, SessionConfig};
use agile_core::synthetic::SyntheticTextEmbedder;

use crate::error::ApiError;

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Sessions persist under `<data_dir>/sessions/<id>/` when set.
    pub data_dir: Option<PathBuf>,
    /// Start training as soon as a batch is fully rated.
    pub auto_train: bool,
    /// Static rating UI bundle served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    /// Seed for the stand-in text embedder used when a concept arrives
    /// without phrase embeddings.
    pub embed_seed: u64,
}

#[derive(Debug, Default)]
struct JobStatus {
    running: Option<&'static str>,
    last_error: Option<ApiError>,
}

struct SessionSlot {
    session: RwLock<Session>,
    job: Mutex<JobStatus>,
}

pub struct AppState {
    corpus: Arc<Corpus>,
    index: Arc<NnIndex>,
    sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
    config: ServerConfig,
}

impl AppState {
    /// Loads any sessions persisted under the data directory.
    pub fn new(index: Arc<NnIndex>, config: ServerConfig) -> anyhow::Result<Arc<Self>> {
        let mut sessions = BTreeMap::new();
        if let Some(dir) = &config.data_dir {
            let root = dir.join("sessions");
            if root.is_dir() {
                for entry in std::fs::read_dir(&root)? {
                    let path = entry?.path();
                    if path.join("session.json").exists() {
                        let s = load_session(&path)?;
                        log::info!("loaded session {}", s.id());
                        sessions.insert(s.id().to_string(), Arc::new(Self::slot(s)));
                    }
                }
            }
        }
        Ok(Arc::new(Self { corpus: index.corpus().clone(), index, sessions: RwLock::new(sessions), config }))
    }

    fn slot(session: Session) -> SessionSlot {
        SessionSlot { session: RwLock::new(session), job: Mutex::new(JobStatus::default()) }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    fn get(&self, id: &str) -> ApiResult<Arc<SessionSlot>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("session {id} not found")))
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("sessions").join(id))
    }

    fn persist(&self, session: &Session) -> ApiResult<()> {
        if let Some(dir) = self.session_dir(session.id()) {
            save_session(session, &dir).map_err(|e| ApiError::internal(format!("persisting session: {e}")))?;
        }
        Ok(())
    }

    /// Writes every session to disk.
    pub fn flush(&self) -> ApiResult<()> {
        let slots: Vec<Arc<SessionSlot>> = self.sessions.read().values().cloned().collect();
        for slot in slots {
            self.persist(&slot.session.read())?;
        }
        Ok(())
    }

    fn item_refs(&self, ids: &[u64]) -> Vec<ItemRef> {
        ids.iter().filter_map(|&id| self.corpus.item(id).cloned()).collect()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/expand", post(expand))
        .route("/sessions/{id}/batch", get(batch))
        .route("/sessions/{id}/ratings", post(ratings))
        .route("/sessions/{id}/train", post(train))
        .route("/sessions/{id}/select", post(select))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/items/{id}/image", get(item_image))
        .route("/ui", get(ui_index))
        .route("/ui/{*path}", get(ui_file))
        .with_state(state)
}

/// Serves until ctrl-c, then flushes every session to disk.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> anyhow::Result<()> {
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    state.flush().map_err(|e| anyhow::anyhow!(e.message))?;
    Ok(())
}

async fn healthz(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "corpus_count": app.corpus.len() }))
}

#[derive(Debug, Deserialize)]
struct ConceptInput {
    name: String,
    #[serde(default)]
    positive_phrases: Vec<String>,
    #[serde(default)]
    negative_phrases: Vec<String>,
    #[serde(default)]
    phrase_embeddings: BTreeMap<String, Vec<f32>>,
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    concept: ConceptInput,
    #[serde(default)]
    config: Option<SessionConfig>,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateRequest = parse_json(&body)?;
    let mut concept = ConceptSpec::new(&req.concept.name, req.concept.positive_phrases, req.concept.negative_phrases)?;
    concept.phrase_embeddings = req.concept.phrase_embeddings;
    concept.embed_missing(&SyntheticTextEmbedder::new(app.corpus.dim(), app.config.embed_seed));
    concept.validate(Some(app.corpus.dim()))?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(&id, concept, req.config.unwrap_or_default())?;
    app.persist(&session)?;
    app.sessions.write().insert(id.clone(), Arc::new(AppState::slot(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Serialize)]
struct SessionView<'a> {
    #[serde(flatten)]
    state: &'a agile_core::session::SessionState,
    ledger_records: usize,
    pending_count: usize,
    job: Option<&'static str>,
    last_error: Option<&'a ApiError>,
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = app.get(&id)?;
    let session = slot.session.read();
    let job = slot.job.lock();
    let state = session.state();
    let view = SessionView {
        state,
        ledger_records: state.ledger.len(),
        pending_count: state.pending_batch.len(),
        job: job.running,
        last_error: job.last_error.as_ref(),
    };
    serde_json::to_value(view).map(Json).map_err(|e| ApiError::internal(e.to_string()))
}

async fn expand(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = app.get(&id)?;
    let worker = app.clone();
    let pending = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u64>> {
        let mut session = slot.session.write();
        let ids = session.expand(&worker.index)?.to_vec();
        worker.persist(&session)?;
        Ok(ids)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(json!({ "pending_batch": app.item_refs(&pending) })))
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    rater_id: Option<String>,
}

async fn batch(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<BatchQuery>,
) -> ApiResult<Json<Value>> {
    let slot = app.get(&id)?;
    let session = slot.session.read();
    let ids = match &q.rater_id {
        Some(r) => session.pending_for(r),
        None => session.state().pending_batch.clone(),
    };
    Ok(Json(json!({
        "round": session.round(),
        "phase": session.phase(),
        "items": app.item_refs(&ids),
    })))
}

async fn ratings(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let records: Vec<RatingInput> = parse_json(&body)?;
    let slot = app.get(&id)?;
    let outcome = {
        let mut session = slot.session.write();
        let outcome = session.submit_ratings(records)?;
        app.persist(&session)?;
        outcome
    };
    let mut phase = outcome.phase;
    if outcome.resolved && app.config.auto_train {
        phase = start_training(&app, &slot)?;
    }
    Ok(Json(json!({
        "resolved": outcome.resolved,
        "phase": phase,
        "accepted": outcome.accepted,
        "duplicates_skipped": outcome.duplicates_skipped,
    })))
}

/// Schedules training unless a job is already running.
fn start_training(app: &Arc<AppState>, slot: &Arc<SessionSlot>) -> ApiResult<Phase> {
    let mut status = slot.job.lock();
    if status.running.is_some() {
        return Ok(slot.session.read().phase());
    }
    let job = slot.session.read().training_job()?;
    status.running = Some("training");
    status.last_error = None;
    drop(status);
    let (app, slot) = (app.clone(), slot.clone());
    tokio::task::spawn_blocking(move || {
        let result = job.run(&app.corpus).map_err(ApiError::from).and_then(|model| {
            let mut session = slot.session.write();
            session.complete_training(&job, model, None)?;
            app.persist(&session)
        });
        let mut status = slot.job.lock();
        status.running = None;
        if let Err(e) = result {
            log::error!("training failed: {}", e.message);
            status.last_error = Some(e);
        }
    });
    Ok(Phase::Training)
}

async fn train(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    let slot = app.get(&id)?;
    let phase = start_training(&app, &slot)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "phase": phase }))))
}

#[derive(Debug, Default, Deserialize)]
struct SelectRequest {
    strategy: Option<Strategy>,
    batch_size: Option<usize>,
}

async fn select(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: SelectRequest = if body.iter().all(u8::is_ascii_whitespace) { SelectRequest::default() } else { parse_json(&body)? };
    if req.batch_size == Some(0) {
        return Err(ApiError::bad_request("batch_size must be positive"));
    }
    let slot = app.get(&id)?;
    let mut status = slot.job.lock();
    if status.running.is_some() {
        return Ok((StatusCode::ACCEPTED, Json(json!({ "phase": slot.session.read().phase() }))));
    }
    let job = slot.session.read().selection_job(req.strategy, req.batch_size)?;
    status.running = Some("selection");
    status.last_error = None;
    drop(status);
    let worker = slot.clone();
    tokio::task::spawn_blocking(move || {
        let result = job.run(&app.corpus).map_err(ApiError::from).and_then(|ids| {
            let mut session = worker.session.write();
            session.complete_selection(&job, ids)?;
            app.persist(&session)
        });
        let mut status = worker.job.lock();
        status.running = None;
        if let Err(e) = result {
            log::error!("selection failed: {}", e.message);
            status.last_error = Some(e);
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "phase": Phase::Selecting }))))
}

async fn metrics(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = app.get(&id)?;
    let session = slot.session.read();
    Ok(Json(json!({ "rounds": session.state().metrics })))
}

async fn item_image(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Response> {
    let item = app.corpus.item(id).ok_or_else(|| ApiError::not_found(format!("item {id} not found")))?;
    Ok(Redirect::temporary(&item.url).into_response())
}

async fn ui_index(State(app): State<Arc<AppState>>) -> ApiResult<Response> {
    serve_static(&app, "index.html")
}

async fn ui_file(State(app): State<Arc<AppState>>, Path(path): Path<String>) -> ApiResult<Response> {
    serve_static(&app, &path)
}

fn serve_static(app: &AppState, rel: &str) -> ApiResult<Response> {
    let root = app.config.ui_dir.as_ref().ok_or_else(|| ApiError::not_found("no UI bundle configured"))?;
    let rel = FsPath::new(if rel.is_empty() { "index.html" } else { rel });
    if rel.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
        return Err(ApiError::bad_request("invalid path"));
    }
    let path = root.join(rel);
    let bytes = std::fs::read(&path).map_err(|_| ApiError::not_found(format!("{} not found", rel.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
