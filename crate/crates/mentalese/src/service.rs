//! HTTP API over dialogue sessions.
//!
//! Requests to one session are serialized through a FIFO lock; reads are
//! served from a snapshot of the last persisted record and never wait on a
//! running utterance.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mentalese_core::infer::SamplingBudget;
use mentalese_core::worlds::{list_worlds, load_world, RenderKind, WorldError};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dialogue::{CreateError, Dialogue, DialogueSettings, Input};
use crate::persist::load_transcript;
use crate::record::{DialogueError, EntryError, EntryResult, ServiceConfig, SessionRecord};

struct Slot {
    dialogue: Arc<tokio::sync::Mutex<Dialogue>>,
    snapshot: RwLock<SessionRecord>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("persistence directory {path}: {source}")]
    Persistence { path: String, source: std::io::Error },
    #[error("cannot restore {path}: {message}")]
    Restore { path: String, message: String },
}

impl AppState {
    /// Prepares the persistence directory and restores every transcript
    /// found in it.
    pub fn new(config: ServiceConfig) -> Result<Self, StartupError> {
        config.prepare().map_err(|source| StartupError::Persistence { path: config.persistence_dir.display().to_string(), source })?;
        let state = AppState { config, sessions: Mutex::new(HashMap::new()) };
        let mut paths: Vec<_> = std::fs::read_dir(&state.config.persistence_dir)
            .map_err(|source| StartupError::Persistence { path: state.config.persistence_dir.display().to_string(), source })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            state.restore(&path).map_err(|message| StartupError::Restore { path: path.display().to_string(), message })?;
        }
        Ok(state)
    }

    fn settings(&self) -> DialogueSettings {
        DialogueSettings {
            translate: self.config.translate,
            render_count: self.config.render_count,
            render_max_attempts: self.config.render_max_attempts,
            persistence_dir: Some(self.config.persistence_dir.clone()),
            threads: self.config.default_budget.parallel_chains,
        }
    }

    fn restore(&self, path: &Path) -> Result<(), String> {
        let record = load_transcript(path).map_err(|e| e.to_string())?;
        let world = load_world(&record.world_id).map_err(|e| e.to_string())?;
        let backend = self.config.backend.build(&world).map_err(|e| e.to_string())?;
        let dialogue = Dialogue::resume(record, backend, self.settings()).map_err(|e| e.to_string())?;
        self.insert(dialogue);
        Ok(())
    }

    fn insert(&self, dialogue: Dialogue) -> Arc<Slot> {
        let id = dialogue.record().session_id.clone();
        let slot = Arc::new(Slot { snapshot: RwLock::new(dialogue.record().clone()), dialogue: Arc::new(tokio::sync::Mutex::new(dialogue)) });
        self.sessions.lock().expect("session table").insert(id, slot.clone());
        slot
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.sessions.lock().expect("session table").get(id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let router = Router::new()
        .route("/worlds", get(list_worlds_handler))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/entries/{n}/render", get(get_render))
        .with_state(state);
    match static_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router,
    }
}

pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    let listen = config.listen;
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(listen).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[derive(Serialize)]
struct WorldInfo {
    id: &'static str,
    title: &'static str,
    render_kind: RenderKind,
}

async fn list_worlds_handler() -> Response {
    let worlds: Vec<WorldInfo> = list_worlds()
        .into_iter()
        .filter_map(|id| load_world(id).ok())
        .map(|w| WorldInfo { id: w.id, title: w.title, render_kind: w.render_kind })
        .collect();
    Json(worlds).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    world: String,
    seed: Option<u64>,
    budget: Option<SamplingBudget>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: CreateSession = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let world = match load_world(&request.world) {
        Ok(w) => w,
        Err(e) => return error(StatusCode::NOT_FOUND, e.to_string()),
    };
    let backend = match state.config.backend.build(&world) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let seed = request.seed.unwrap_or_else(rand::random);
    let budget = request.budget.unwrap_or(state.config.default_budget);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let dialogue = match Dialogue::create(&request.world, id, created_at, seed, budget, backend, state.settings()) {
        Ok(d) => d,
        Err(CreateError::World(e @ WorldError::Unknown(_))) => return error(StatusCode::NOT_FOUND, e.to_string()),
        Err(CreateError::Budget(e)) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    if let Err(e) = dialogue.save() {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    let record = dialogue.record().clone();
    state.insert(dialogue);
    (StatusCode::CREATED, Json(record)).into_response()
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match state.slot(&id) {
        Some(slot) => Json(slot.snapshot.read().expect("snapshot").clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown session `{}`", id)),
    }
}

async fn post_utterance(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let Some(slot) = state.slot(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session `{}`", id));
    };
    let input: Input = match serde_json::from_slice(&body) {
        Ok(i) => i,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("expected {{tag, text, override_candidate?}} or {{code, tag?}}: {}", e)),
    };
    let guard = slot.dialogue.clone().lock_owned().await;
    let joined = tokio::task::spawn_blocking(move || {
        let mut guard = guard;
        let result = guard.step(input).cloned();
        (result, guard.record().clone())
    })
    .await;
    let (result, record) = match joined {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    *slot.snapshot.write().expect("snapshot") = record;
    match result {
        Ok(entry) => {
            let status = match &entry.result {
                EntryResult::Error { error: EntryError::ZeroAcceptance { .. } } => StatusCode::CONFLICT,
                EntryResult::Error { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::OK,
            };
            (status, Json(entry)).into_response()
        }
        Err(e) => {
            let status = match e {
                DialogueError::OverrideOutOfRange { .. } | DialogueError::OverrideInvalid { .. } => StatusCode::BAD_REQUEST,
                DialogueError::Closed => StatusCode::CONFLICT,
                DialogueError::Backend(_) => StatusCode::BAD_GATEWAY,
                DialogueError::Persist(_) | DialogueError::Render(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e.to_string())
        }
    }
}

#[derive(Deserialize)]
struct RenderQuery {
    #[serde(default)]
    k: usize,
}

async fn get_render(State(state): State<Arc<AppState>>, UrlPath((id, n)): UrlPath<(String, usize)>, Query(q): Query<RenderQuery>) -> Response {
    let Some(slot) = state.slot(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session `{}`", id));
    };
    let path = {
        let record = slot.snapshot.read().expect("snapshot");
        let Some(entry) = record.entries.get(n) else {
            return error(StatusCode::NOT_FOUND, format!("session has no entry {}", n));
        };
        let Some(render) = entry.renders.get(q.k) else {
            return error(StatusCode::NOT_FOUND, format!("entry {} has no render {}", n, q.k));
        };
        state.config.persistence_dir.join(&render.svg)
    };
    match tokio::fs::read(&path).await {
        Ok(svg) => ([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, format!("render file missing: {}", e)),
    }
}
