//! HTTP JSON API.
//!
//! | method | path                    | body / query                              |
//! |--------|-------------------------|-------------------------------------------|
//! | POST   | `/sessions`             | `{"clip": {...}}`, `{"clip_id": "..."}` or `{}` |
//! | POST   | `/sessions/{id}/ask`    | `{"question": "...", "overrides": {"route": "FastRag", "verify": true}}` |
//! | GET    | `/sessions/{id}/trace`  |                                           |
//! | POST   | `/kb/ingest`            | `{"corpus_dir": "..."}` or `{"documents": [{"name", "text"}]}` |
//! | GET    | `/kb/search`            | `?q=...&k=...`                            |
//! | GET    | `/clips`                |                                           |
//! | GET    | `/healthz`              |                                           |
//!
//! Errors are `{"error": "...", "role": "reasoner"}` with status 400 for bad
//! input, 404 for unknown sessions, 502 when a model backend failed and 503
//! while the knowledge base is being rebuilt.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use helmsman_core::ats::FrameManifest;
use helmsman_core::backends::{BackendSet, Role};
use helmsman_core::dataset::DatasetManifest;
use helmsman_core::engine::{AskOverrides, Engine, EngineConfig};
use helmsman_core::knowledge::{load_corpus_dir, retrieve, ChunkingConfig, KnowledgeBase, SourceDocument};
use helmsman_core::trace::{ClockMode, Session, TraceRecord, TraceSink};
use helmsman_core::Error;

pub struct ServiceState {
    pub backends: Arc<BackendSet>,
    pub engine_config: EngineConfig,
    pub chunking: ChunkingConfig,
    pub clips: Option<DatasetManifest>,
    pub sink: Arc<dyn TraceSink>,
    pub clock: ClockMode,
    pub full_prompts: bool,
    pub mock: bool,
    kb: RwLock<Arc<KnowledgeBase>>,
    reloading: AtomicBool,
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
}

struct SessionEntry {
    session: Session,
    clip: Option<FrameManifest>,
    /// Serializes questions within one session.
    turn: tokio::sync::Mutex<()>,
}

impl ServiceState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        backends: Arc<BackendSet>,
        kb: KnowledgeBase,
        engine_config: EngineConfig,
        chunking: ChunkingConfig,
        clips: Option<DatasetManifest>,
        sink: Arc<dyn TraceSink>,
        clock: ClockMode,
        full_prompts: bool,
        mock: bool,
    ) -> Self {
        Self {
            backends,
            engine_config,
            chunking,
            clips,
            sink,
            clock,
            full_prompts,
            mock,
            kb: RwLock::new(Arc::new(kb)),
            reloading: AtomicBool::new(false),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn kb(&self) -> Arc<KnowledgeBase> {
        self.kb.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn kb_or_busy(&self) -> Result<Arc<KnowledgeBase>, ApiError> {
        if self.reloading.load(Ordering::SeqCst) {
            return Err(ApiError::unavailable("knowledge base reload in progress"));
        }
        Ok(self.kb())
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    role: Option<Role>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            role: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
            role: None,
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: message.into(),
            role: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = if e.is_backend() {
            StatusCode::BAD_GATEWAY
        } else if matches!(e, Error::Io { .. } | Error::InvalidState(_)) {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::BAD_REQUEST
        };
        Self {
            status,
            role: e.failed_role().filter(|_| e.is_backend()),
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "role": self.role });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/clips", get(list_clips))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/ask", post(ask))
        .route("/sessions/{id}/trace", get(session_trace))
        .route("/kb/ingest", post(ingest))
        .route("/kb/search", get(search))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "kb_chunks": state.kb().len(),
        "reloading": state.reloading.load(Ordering::SeqCst),
        "mock": state.mock,
    }))
}

async fn list_clips(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    let clips: Vec<Value> = state
        .clips
        .iter()
        .flat_map(|d| d.clips.values())
        .map(|c| json!({ "clip_id": c.clip_id, "frame_count": c.frame_count(), "duration_s": c.duration() }))
        .collect();
    Json(json!({ "clips": clips }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    clip: Option<FrameManifest>,
    clip_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct SessionCreated {
    session_id: String,
    clip_id: Option<String>,
    frame_count: Option<usize>,
}

async fn create_session(
    State(state): State<Arc<ServiceState>>,
    body: Option<Json<Value>>,
) -> ApiResult<SessionCreated> {
    let req: CreateSession = match body {
        Some(Json(v)) => serde_json::from_value(v).map_err(|e| ApiError::bad_request(format!("invalid session request: {e}")))?,
        None => CreateSession::default(),
    };
    let clip = match (req.clip, req.clip_id) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either clip or clip_id, not both")),
        (Some(clip), None) => {
            clip.validate()?;
            Some(clip)
        }
        (None, Some(id)) => {
            let found = state.clips.as_ref().and_then(|d| d.clip(&id)).cloned();
            Some(found.ok_or_else(|| ApiError::bad_request(format!("unknown clip_id {id:?}")))?)
        }
        (None, None) => None,
    };
    let id = uuid::Uuid::new_v4().to_string();
    let entry = SessionEntry {
        session: Session::new(id.clone(), state.clock, state.sink.clone()).with_full_prompts(state.full_prompts),
        clip,
        turn: tokio::sync::Mutex::new(()),
    };
    let created = SessionCreated {
        session_id: id.clone(),
        clip_id: entry.clip.as_ref().map(|c| c.clip_id.clone()),
        frame_count: entry.clip.as_ref().map(FrameManifest::frame_count),
    };
    state
        .sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id, Arc::new(entry));
    Ok(Json(created))
}

fn session(state: &ServiceState, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
    state
        .sessions
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AskRequest {
    question: String,
    #[serde(default)]
    overrides: AskOverrides,
}

#[derive(Debug, Serialize)]
struct HitView {
    chunk_id: String,
    section_label: Option<String>,
    text: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct GradeView {
    score: f64,
    parse_ok: bool,
    rationale: String,
}

#[derive(Debug, Serialize)]
struct AskResponse {
    session_id: String,
    answer: String,
    route: String,
    used_fallback: bool,
    verified: Option<bool>,
    retries: usize,
    score_history: Vec<GradeView>,
    threshold: f64,
    rules: Vec<HitView>,
    latency_ms: u64,
    trace_degraded: bool,
}

async fn ask(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> ApiResult<AskResponse> {
    let entry = session(&state, &id)?;
    let Json(req) = body?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question is empty"));
    }
    let kb = state.kb_or_busy()?;
    let engine = Engine::new(state.backends.clone(), kb, state.engine_config.clone());
    let _turn = entry.turn.lock().await;
    let out = engine
        .answer(&entry.session, &req.question, entry.clip.as_ref(), req.overrides)
        .await?;
    Ok(Json(AskResponse {
        session_id: id,
        answer: out.answer,
        route: out.route.path.to_string(),
        used_fallback: out.route.used_fallback,
        verified: out.verified,
        retries: out.retries,
        score_history: out
            .score_history
            .into_iter()
            .map(|g| GradeView {
                score: g.score,
                parse_ok: g.parse_ok,
                rationale: g.rationale,
            })
            .collect(),
        threshold: state.engine_config.verification.threshold,
        rules: out
            .hits
            .into_iter()
            .map(|h| HitView {
                chunk_id: h.chunk.chunk_id,
                section_label: h.chunk.section_label,
                text: h.chunk.text,
                score: h.score,
            })
            .collect(),
        latency_ms: out.latency_ms,
        trace_degraded: entry.session.trace_degraded(),
    }))
}

#[derive(Debug, Serialize)]
struct TraceResponse {
    session_id: String,
    trace_degraded: bool,
    records: Vec<TraceRecord>,
}

async fn session_trace(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<TraceResponse> {
    let entry = session(&state, &id)?;
    Ok(Json(TraceResponse {
        session_id: id,
        trace_degraded: entry.session.trace_degraded(),
        records: entry.session.records(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRequest {
    corpus_dir: Option<PathBuf>,
    documents: Option<Vec<SourceDocument>>,
    chunking: Option<ChunkingConfig>,
}

struct ReloadGuard<'a>(&'a AtomicBool);

impl Drop for ReloadGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

async fn ingest(
    State(state): State<Arc<ServiceState>>,
    body: Result<Json<IngestRequest>, JsonRejection>,
) -> ApiResult<Value> {
    let Json(req) = body?;
    let docs = match (req.corpus_dir, req.documents) {
        (Some(dir), None) => load_corpus_dir(dir)?,
        (None, Some(docs)) => docs,
        _ => return Err(ApiError::bad_request("give exactly one of corpus_dir or documents")),
    };
    let chunking = req.chunking.unwrap_or(state.chunking);
    if state
        .reloading
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .is_err()
    {
        return Err(ApiError::unavailable("another knowledge base reload is in progress"));
    }
    let _guard = ReloadGuard(&state.reloading);
    let kb = KnowledgeBase::ingest(&docs, chunking, state.backends.client(Role::Embedder)?).await?;
    let summary = json!({ "chunks": kb.len(), "dimension": kb.dimension(), "embedder_id": kb.embedder_id() });
    *state.kb.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(kb);
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    q: String,
    k: Option<usize>,
}

async fn search(
    State(state): State<Arc<ServiceState>>,
    query: Result<Query<SearchQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Value> {
    let Query(query) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if query.q.trim().is_empty() {
        return Err(ApiError::bad_request("q is empty"));
    }
    let k = query.k.unwrap_or(state.engine_config.dispatch.top_k);
    let kb = state.kb_or_busy()?;
    let r = retrieve(&kb, &query.q, k, state.backends.client(Role::Embedder)?).await?;
    let hits: Vec<HitView> = r
        .context
        .hits
        .into_iter()
        .map(|h| HitView {
            chunk_id: h.chunk.chunk_id,
            section_label: h.chunk.section_label,
            text: h.chunk.text,
            score: h.score,
        })
        .collect();
    Ok(Json(json!({ "query": query.q, "k": k, "hits": hits })))
}
