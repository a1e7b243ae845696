//! JSON API over one spec.
//!
//! Reads share the session; mutations take it exclusively and run on the
//! blocking pool, since engine calls wait on the model. Every mutation
//! answers with the full chunk list.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::RwLock;
use tracing::{info, warn};

use semcommit_core::bench::{load_benchmark, run_method, BenchConfig, Dataset, Method, PositiveClass};
use semcommit_core::engine::{
    check_for_conflicts, local_rewrite, make_change, should_request_clarification, suggest_strategies, underline_words,
};
use semcommit_core::store::{ChunkEvent, Origin};
use semcommit_core::{
    Action, ChangeRequest, ChunkId, EngineConfig, EngineError, Gateway, GatewayError, IntentSpec, KnowledgeGraph,
    StoreError,
};

use crate::error::CliError;
use crate::files::SpecFiles;

/// A clarifying question waiting for the client to re-post with an answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingClarification {
    pub request: ChangeRequest,
    pub question: String,
}

#[derive(Debug)]
pub struct Session {
    pub spec: IntentSpec,
    pub graph: KnowledgeGraph,
    pub gateway: Gateway,
    pub config: EngineConfig,
    /// Where to persist after each mutation; `None` keeps everything in memory.
    pub files: Option<SpecFiles>,
    /// The last change checked or applied; local aids fall back to it.
    pub last_request: Option<ChangeRequest>,
    pub pending_clarification: Option<PendingClarification>,
}

impl Session {
    pub fn in_memory(spec: IntentSpec, graph: KnowledgeGraph, gateway: Gateway) -> Self {
        Self {
            spec,
            graph,
            gateway,
            config: EngineConfig::default(),
            files: None,
            last_request: None,
            pending_clarification: None,
        }
    }

    /// Review document plus the event log position.
    pub fn snapshot(&self) -> Value {
        let mut doc: Value = serde_json::from_str(&self.spec.to_review_json()).expect("review json parses");
        doc["log_cursor"] = json!(self.spec.log().len());
        doc
    }

    fn persist(&self) -> Result<(), ApiError> {
        if let Some(files) = &self.files {
            files
                .persist(&self.spec, Some(&self.graph))
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        Ok(())
    }

    fn request_or_last(&self, action: Option<Action>, new_info: Option<String>) -> Result<ChangeRequest, ApiError> {
        match (new_info, &self.last_request) {
            (Some(info), _) => Ok(ChangeRequest::new(action.unwrap_or(Action::Add), info)),
            (None, Some(last)) => Ok(last.clone()),
            (None, None) => Err(ApiError::bad_request(
                "no change in this session yet; pass action and new_info",
            )),
        }
    }
}

pub type Shared = Arc<RwLock<Session>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    warnings: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            warnings: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) | StoreError::UnknownRevision(_) => StatusCode::NOT_FOUND,
            StoreError::IllegalTransition { .. } | StoreError::DuplicateId(_) => StatusCode::CONFLICT,
            StoreError::Format { .. } | StoreError::InvalidSpan { .. } => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let message = e.to_string();
        Self {
            status: StatusCode::BAD_GATEWAY,
            warnings: vec![message.clone()],
            message: "model provider failed".into(),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidRequest(m) => Self::bad_request(m),
            EngineError::Store(s) => s.into(),
            EngineError::Gateway(g) => g.into(),
            EngineError::NotFlagged(_) => Self::new(StatusCode::CONFLICT, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "warnings": self.warnings });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Parses a JSON body; schema violations are 400s. An empty body reads as
/// `{}` so optional-body endpoints accept a bare POST.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Merges `out` into the response next to `chunks` and `log_cursor`.
fn respond(session: &Session, out: Value) -> Value {
    let mut doc = session.snapshot();
    match out {
        Value::Object(map) => {
            for (k, v) in map {
                doc[k.as_str()] = v;
            }
        }
        Value::Null => {}
        other => doc["result"] = other,
    }
    doc
}

/// Runs `f` with exclusive access on the blocking pool, persists, and
/// answers with the updated chunk list.
async fn mutate<F>(state: &Shared, f: F) -> ApiResult
where
    F: FnOnce(&mut Session) -> Result<Value, ApiError> + Send + 'static,
{
    let mut guard = state.clone().write_owned().await;
    tokio::task::spawn_blocking(move || {
        let out = f(&mut guard)?;
        guard.persist()?;
        Ok(Json(respond(&guard, out)))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddBody {
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChangeBody {
    action: Action,
    new_info: String,
    #[serde(default)]
    target: Option<ChunkId>,
    #[serde(default)]
    steer: Option<String>,
    #[serde(default)]
    clarification: Option<String>,
    /// `false` skips the clarification router.
    #[serde(default)]
    clarify: Option<bool>,
}

impl ChangeBody {
    fn request(&self) -> ChangeRequest {
        ChangeRequest {
            action: self.action,
            new_info: self.new_info.clone(),
            target: self.target.clone(),
            steer: self.steer.clone(),
            clarification: self.clarification.clone(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AidBody {
    #[serde(default)]
    steer: Option<String>,
    #[serde(default)]
    action: Option<Action>,
    #[serde(default)]
    new_info: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DatasetSource {
    Inline(Dataset),
    Path(PathBuf),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchBody {
    method: Method,
    dataset: DatasetSource,
    #[serde(default)]
    positive: PositiveClass,
}

/// Asks the clarification router unless the body already answers or opts
/// out. Returns the question when one is needed.
fn clarify(session: &mut Session, b: &ChangeBody, req: &ChangeRequest) -> Option<String> {
    if req.clarification.is_some() || b.clarify == Some(false) {
        session.pending_clarification = None;
        return None;
    }
    req.validate().ok()?;
    let q = should_request_clarification(&session.spec, req, &session.gateway);
    session.pending_clarification = q.clone().map(|question| PendingClarification {
        request: req.clone(),
        question,
    });
    q
}

async fn get_spec(State(state): State<Shared>) -> Json<Value> {
    Json(state.read().await.snapshot())
}

async fn get_graph(State(state): State<Shared>) -> Json<Value> {
    let s = state.read().await;
    Json(serde_json::from_str(&s.graph.to_json()).expect("graph json parses"))
}

async fn add_chunk(State(state): State<Shared>, bytes: Bytes) -> ApiResult {
    let b: AddBody = body(&bytes)?;
    if b.text.trim().is_empty() {
        return Err(ApiError::bad_request("text must not be empty"));
    }
    mutate(&state, move |s| {
        let text = b.text.trim().to_string();
        let id = s.spec.add_chunk(text.clone());
        s.graph.update_for_chunk(&id, &text, &s.gateway);
        let warnings = s.graph.take_warnings();
        Ok(json!({ "chunk_id": id, "warnings": warnings }))
    })
    .await
}

async fn change_check(State(state): State<Shared>, bytes: Bytes) -> ApiResult {
    let b: ChangeBody = body(&bytes)?;
    mutate(&state, move |s| {
        let req = b.request();
        if let Some(q) = clarify(s, &b, &req) {
            return Ok(json!({ "clarification_needed": q }));
        }
        let cfg = s.config;
        let report = check_for_conflicts(&mut s.spec, &s.graph, &req, &s.gateway, &cfg)?;
        if report.provider_failures > 0 {
            warn!(failures = report.provider_failures, "classifier calls failed during check");
        }
        s.last_request = Some(req);
        Ok(to_value(&report))
    })
    .await
}

async fn change_apply(State(state): State<Shared>, bytes: Bytes) -> ApiResult {
    let b: ChangeBody = body(&bytes)?;
    mutate(&state, move |s| {
        let req = b.request();
        if let Some(q) = clarify(s, &b, &req) {
            return Ok(json!({ "clarification_needed": q }));
        }
        let cfg = s.config;
        let outcome = make_change(&mut s.spec, &s.graph, &req, &s.gateway, &cfg)?;
        s.last_request = Some(req);
        Ok(to_value(&outcome))
    })
    .await
}

async fn chunk_local_rewrite(State(state): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let b: AidBody = body(&bytes)?;
    mutate(&state, move |s| {
        let req = s.request_or_last(b.action, b.new_info)?;
        let out = local_rewrite(&mut s.spec, &ChunkId::new(id), &req, b.steer.as_deref(), &s.gateway)?;
        Ok(to_value(&out))
    })
    .await
}

async fn chunk_strategies(State(state): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let b: AidBody = body(&bytes)?;
    let guard = state.clone().read_owned().await;
    tokio::task::spawn_blocking(move || {
        let req = guard.request_or_last(b.action, b.new_info)?;
        let chunk = guard.spec.chunk(&ChunkId::new(id))?;
        let strategies = suggest_strategies(chunk, &req, &guard.gateway)?;
        Ok(Json(respond(&guard, json!({ "strategies": strategies }))))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn chunk_underline(State(state): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let b: AidBody = body(&bytes)?;
    mutate(&state, move |s| {
        let req = s.request_or_last(b.action, b.new_info)?;
        let spans = underline_words(&mut s.spec, &ChunkId::new(id), &req, &s.gateway)?;
        Ok(json!({ "spans": spans }))
    })
    .await
}

/// A single store transition; resolving may change committed text, so the
/// graph is synced afterwards.
async fn transition(state: Shared, id: String, event: ChunkEvent) -> ApiResult {
    let sync = matches!(event, ChunkEvent::Resolve);
    mutate(&state, move |s| {
        s.spec.transition(&ChunkId::new(id), event)?;
        if sync {
            let touched = s.graph.sync(&s.spec, &s.gateway);
            let warnings = s.graph.take_warnings();
            return Ok(json!({ "graph_updated": touched, "warnings": warnings }));
        }
        Ok(Value::Null)
    })
    .await
}

async fn chunk_resolve(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    transition(state, id, ChunkEvent::Resolve).await
}

async fn chunk_revert(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    transition(state, id, ChunkEvent::Revert).await
}

async fn chunk_clear(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    transition(state, id, ChunkEvent::Clear).await
}

async fn chunk_edit(State(state): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let b: AddBody = body(&bytes)?;
    let event = ChunkEvent::ProposeEdit {
        text: b.text,
        origin: Origin::User,
    };
    transition(state, id, event).await
}

async fn chunk_delete(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    transition(state, id, ChunkEvent::ProposeDelete { origin: Origin::User }).await
}

async fn revert_all(State(state): State<Shared>) -> ApiResult {
    mutate(&state, |s| {
        s.spec.revert_all();
        Ok(Value::Null)
    })
    .await
}

async fn clear_conflicts(State(state): State<Shared>) -> ApiResult {
    mutate(&state, |s| {
        s.spec.clear_all_conflicts();
        Ok(Value::Null)
    })
    .await
}

async fn bench_run(State(state): State<Shared>, bytes: Bytes) -> ApiResult {
    let b: BenchBody = body(&bytes)?;
    let (gateway, engine) = {
        let s = state.read().await;
        (s.gateway.clone(), s.config)
    };
    tokio::task::spawn_blocking(move || {
        let dataset = match b.dataset {
            DatasetSource::Inline(d) => {
                d.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
                d
            }
            DatasetSource::Path(p) => load_benchmark(&p).map_err(|e| ApiError::bad_request(e.to_string()))?,
        };
        let cfg = BenchConfig {
            engine,
            positive: b.positive,
            ..Default::default()
        };
        let report = run_method(b.method, &dataset, &gateway, &cfg);
        Ok(Json(to_value(&report)))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/spec", get(get_spec))
        .route("/graph", get(get_graph))
        .route("/chunks", post(add_chunk))
        .route("/change/check", post(change_check))
        .route("/change/apply", post(change_apply))
        .route("/chunks/{id}", delete(chunk_delete))
        .route("/chunks/{id}/local-rewrite", post(chunk_local_rewrite))
        .route("/chunks/{id}/strategies", post(chunk_strategies))
        .route("/chunks/{id}/underline", post(chunk_underline))
        .route("/chunks/{id}/resolve", post(chunk_resolve))
        .route("/chunks/{id}/revert", post(chunk_revert))
        .route("/chunks/{id}/clear", post(chunk_clear))
        .route("/chunks/{id}/edit", post(chunk_edit))
        .route("/revert-all", post(revert_all))
        .route("/clear-conflicts", post(clear_conflicts))
        .route("/bench/run", post(bench_run))
        .with_state(state)
}

pub fn shared(session: Session) -> Shared {
    Arc::new(RwLock::new(session))
}

pub async fn serve(session: Session, addr: SocketAddr) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
    info!(%addr, "serving");
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(shared(session)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Usage(format!("server error: {e}")))
}
