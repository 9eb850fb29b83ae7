//! Multi-session HTTP+JSON service over the vlab engine.
//!
//! Endpoints:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/packs` | loaded packs and their procedures |
//! | POST | `/packs/reload` | rescan the content directory |
//! | GET | `/sessions` | session handles |
//! | POST | `/sessions` | start a session |
//! | GET | `/sessions/{id}/state` | world view |
//! | POST | `/sessions/{id}/actions` | submit an action |
//! | POST | `/sessions/{id}/finish` | finish, returns the report |
//! | GET | `/sessions/{id}/report` | the report of a finished session |
//! | GET | `/sessions/{id}/log` | replay log as JSON lines |
//! | GET | `/sessions/{id}/events` | event stream, SSE or `?format=ndjson` |

mod error;
pub mod events;
pub mod store;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast;
use tower_http::cors::CorsLayer;
use vlab_core::canonical::to_canonical_string;
use vlab_core::engine::Action;
use vlab_core::formats::{validate_scene, SceneFile};
use vlab_core::session::{world_to_scene, Mode, Session};

pub use error::ApiError;
pub use events::{EventType, StreamEvent};
use store::{LoadProblem, PackLibrary, SessionHandle, SessionSlot, SessionStore};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7180";
pub const DEFAULT_SESSION_CAP: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Directory of `.vpack` files; the bundled packs when absent.
    pub content_dir: Option<PathBuf>,
    pub session_cap: usize,
    /// Where to write one canonical JSON file per session on shutdown.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: DEFAULT_LISTEN.parse().expect("valid default"),
            content_dir: None,
            session_cap: DEFAULT_SESSION_CAP,
            snapshot_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
struct Inner {
    packs: RwLock<PackLibrary>,
    sessions: Mutex<SessionStore>,
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Loads packs; unreadable or invalid files are reported and skipped.
    pub fn new(content_dir: Option<&Path>, session_cap: usize) -> (AppState, Vec<LoadProblem>) {
        let (packs, problems) = PackLibrary::load(content_dir);
        let state = AppState(Arc::new(Inner {
            packs: RwLock::new(packs),
            sessions: Mutex::new(SessionStore::new(session_cap)),
        }));
        (state, problems)
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, SessionStore> {
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions().get(id).ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    /// Writes `<session_id>.json` per session into `dir`.
    pub fn snapshot(&self, dir: &Path) -> std::io::Result<usize> {
        std::fs::create_dir_all(dir)?;
        let slots = self.sessions().all();
        for slot in &slots {
            let inner = slot.lock();
            let s = &inner.session;
            let doc = serde_json::json!({
                "session_id": slot.handle.session_id,
                "created_at": slot.handle.created_at,
                "mode": s.mode(),
                "procedure_id": s.procedure().map(|p| p.id.clone()),
                "pack_ref": s.pack().pack_ref(),
                "finished": s.is_finished(),
                "state_hash": s.state_hash(),
                "matched_steps": s.matched_steps(),
                "scene": world_to_scene(s.world(), s.pack().pack_ref()),
                "log": s.log_records(),
            });
            std::fs::write(dir.join(format!("{}.json", slot.handle.session_id)), to_canonical_string(&doc))?;
        }
        Ok(slots.len())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/packs", get(list_packs))
        .route("/packs/reload", post(reload_packs))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/actions", post(post_action))
        .route("/sessions/{id}/finish", post(finish_session))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/events", get(get_events))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds and serves until `shutdown` resolves, then writes snapshots if a
/// snapshot directory is configured.
pub async fn serve(
    config: ServiceConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let (state, problems) = AppState::new(config.content_dir.as_deref(), config.session_cap);
    for p in problems {
        tracing::warn!(file = %p.file, "skipping pack: {}", p.message);
    }
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.listen,
            source,
        })?;
    tracing::info!("listening on {}", listener.local_addr()?);
    serve_listener(listener, state.clone(), shutdown).await?;
    if let Some(dir) = &config.snapshot_dir {
        let n = state.snapshot(dir)?;
        tracing::info!("wrote {n} session snapshots to {}", dir.display());
    }
    Ok(())
}

/// Serves `state` on an already bound listener.
pub async fn serve_listener(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

fn json_body<T: serde::de::DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid_body(e.to_string()))
}

fn packs_view(lib: &PackLibrary) -> serde_json::Value {
    let packs: Vec<_> = lib
        .packs
        .values()
        .map(|p| {
            let procedures: Vec<_> = p
                .procedures
                .iter()
                .map(|q| serde_json::json!({"id": q.id, "title": q.title}))
                .collect();
            serde_json::json!({"pack_id": p.pack_id, "version": p.version, "procedures": procedures})
        })
        .collect();
    serde_json::Value::Array(packs)
}

async fn list_packs(State(state): State<AppState>) -> Json<serde_json::Value> {
    let lib = state.0.packs.read().unwrap_or_else(|p| p.into_inner());
    Json(packs_view(&lib))
}

async fn reload_packs(State(state): State<AppState>) -> Json<serde_json::Value> {
    let dir = state.0.packs.read().unwrap_or_else(|p| p.into_inner()).dir.clone();
    let (lib, problems) = PackLibrary::load(dir.as_deref());
    let view = packs_view(&lib);
    *state.0.packs.write().unwrap_or_else(|p| p.into_inner()) = lib;
    Json(serde_json::json!({"packs": view, "problems": problems}))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<SessionHandle>> {
    Json(state.sessions().all().iter().map(|s| s.handle.clone()).collect())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(alias = "pack")]
    pack_id: String,
    mode: Mode,
    #[serde(default, alias = "procedure")]
    procedure_id: Option<String>,
    #[serde(default)]
    scene_override: Option<SceneFile>,
}

fn state_view(handle: &SessionHandle, session: &Session) -> serde_json::Value {
    let world = session.world();
    let entities: Vec<_> = world.entities.values().collect();
    let suggestion = match session.mode() {
        Mode::Instruction => serde_json::to_value(session.current_suggestion()).expect("serializes"),
        _ => serde_json::Value::Null,
    };
    serde_json::json!({
        "session_id": handle.session_id,
        "pack_id": handle.pack_id,
        "mode": session.mode(),
        "procedure_id": session.procedure().map(|p| p.id.clone()),
        "tick": world.tick,
        "zones": world.zones,
        "entities": entities,
        "focus": session.focus(),
        "matched_steps": session.matched_steps(),
        "steps_total": session.procedure().map_or(0, |p| p.steps.len()),
        "completed": session.procedure().is_some() && session.completed(),
        "finished": session.is_finished(),
        "state_hash": session.state_hash(),
        "suggestion": suggestion,
    })
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = json_body(&body)?;
    let pack = {
        let lib = state.0.packs.read().unwrap_or_else(|p| p.into_inner());
        lib.packs.get(&req.pack_id).cloned().ok_or_else(|| ApiError::unknown_pack(&req.pack_id))?
    };
    let scene = req.scene_override.unwrap_or_else(|| pack.default_scene.clone());
    let violations = validate_scene(&scene, &pack);
    if !violations.is_empty() {
        let mut e = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_scene",
            format!("scene override has {} violation(s)", violations.len()),
        );
        e.details = violations
            .iter()
            .map(|v| serde_json::json!({"path": v.path, "message": v.message}))
            .collect();
        return Err(e);
    }
    let session = Session::start(&scene, pack.clone(), req.mode, req.procedure_id.as_deref())?;
    let handle = SessionHandle {
        session_id: uuid::Uuid::new_v4().simple().to_string(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        pack_id: pack.pack_id.clone(),
        mode: req.mode,
    };
    let view = state_view(&handle, &session);
    let slot = Arc::new(SessionSlot::new(handle.clone(), session));
    if let Some(evicted) = state.sessions().insert(slot)? {
        tracing::debug!("evicted finished session {evicted}");
    }
    let body = serde_json::json!({
        "session_id": handle.session_id,
        "created_at": handle.created_at,
        "pack_id": handle.pack_id,
        "mode": handle.mode,
        "state": view,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_state(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let slot = state.slot(&id)?;
    let inner = slot.lock();
    Ok(Json(state_view(&slot.handle, &inner.session)))
}

async fn post_action(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let slot = state.slot(&id)?;
    let action: Action = json_body(&body)?;
    let (outcome, tick) = slot.submit(&action)?;
    let (events, delta, fired) = match &outcome.result {
        Some(r) => (r.events.clone(), r.state_delta.clone(), r.fired_rules.clone()),
        None => Default::default(),
    };
    Ok(Json(serde_json::json!({
        "accepted": outcome.accepted,
        "reason": outcome.reason,
        "events": events,
        "fired_rules": fired,
        "state_delta": delta,
        "newly_matched": outcome.newly_matched,
        "completed": outcome.completed,
        "logged": outcome.logged,
        "tick": tick,
    })))
}

fn canonical_json(value: &impl serde::Serialize) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        to_canonical_string(value),
    )
        .into_response()
}

async fn finish_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    Ok(canonical_json(&slot.finish()))
}

async fn get_report(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let inner = slot.lock();
    match inner.session.report() {
        Some(r) => Ok(canonical_json(r)),
        None => Err(ApiError::new(
            StatusCode::CONFLICT,
            "not_finished",
            "the session has not been finished",
        )),
    }
}

async fn get_log(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let log = slot.lock().session.export_log();
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))], log).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    format: Option<String>,
}

fn event_stream(history: Vec<StreamEvent>, live: Option<broadcast::Receiver<StreamEvent>>) -> impl Stream<Item = StreamEvent> {
    let follow = stream::unfold(live, |rx| async move {
        let mut rx = rx?;
        // a lagging client is cut off; reconnecting replays the history
        match rx.recv().await {
            Ok(e) => Some((e, Some(rx))),
            Err(_) => None,
        }
    });
    stream::iter(history).chain(follow)
}

async fn get_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let (history, live) = slot.subscribe();
    drop(slot);
    let accept = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).unwrap_or("");
    let ndjson = match q.format.as_deref() {
        Some("ndjson") => true,
        Some("sse") | None => accept.contains("application/x-ndjson"),
        Some(other) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_format", format!("unknown format \"{other}\""))),
    };
    let events = event_stream(history, live);
    if ndjson {
        let lines = events.map(|e| Ok::<_, Infallible>(Bytes::from(serde_json::to_string(&e).expect("serializes") + "\n")));
        Ok((
            [(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))],
            Body::from_stream(lines),
        )
            .into_response())
    } else {
        let sse = events.map(|e| {
            let name = serde_json::to_value(e.event_type).expect("serializes");
            Ok::<_, Infallible>(
                SseEvent::default()
                    .id(e.seq.to_string())
                    .event(name.as_str().unwrap_or("event"))
                    .data(serde_json::to_string(&e).expect("serializes")),
            )
        });
        Ok(Sse::new(sse).keep_alive(KeepAlive::default()).into_response())
    }
}
