//! Local HTTP service for the chat engine.
//!
//! | Method | Path                  | Purpose                                  |
//! |--------|-----------------------|------------------------------------------|
//! | GET    | `/api/model/status`   | download / load progress                 |
//! | POST   | `/api/sessions`       | new session id                           |
//! | POST   | `/api/chat`           | start a turn (`202`, `409` busy, `503`)  |
//! | POST   | `/api/chat/cancel`    | stop the running turn                    |
//! | GET    | `/api/chat/stream`    | SSE: `token`, `action`, `warning`, `done`|
//! | GET    | `/api/chat/history`   | stored turns                             |
//! | GET    | `/api/settings`       | display settings                         |
//! | POST   | `/api/settings`       | partial settings update                  |

pub mod model;
pub mod sessions;
pub mod settings;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{stream, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use stlm_core::chat::{ChatSettings, Engine};
use tokio::net::TcpListener;
use tokio_stream::wrappers::BroadcastStream;

pub use model::{ModelSlot, ModelSource, ModelStatus};
use sessions::{valid_id, SessionEntry, Sessions};
use settings::{SettingsPatch, SettingsStore};

pub const SETTINGS_BODY_LIMIT: usize = 256 * 1024;
const CHAT_BODY_LIMIT: usize = 64 * 1024;

pub struct ServerConfig {
    pub source: ModelSource,
    /// Settings file and session transcripts live here.
    pub data_dir: PathBuf,
    pub heartbeat: Duration,
    pub chat: ChatSettings,
}

pub struct AppState {
    pub model: ModelSlot,
    sessions: Sessions,
    settings: Mutex<SettingsStore>,
    heartbeat: Duration,
}

impl AppState {
    pub fn new(config: &ServerConfig) -> anyhow::Result<Arc<Self>> {
        std::fs::create_dir_all(&config.data_dir)?;
        Ok(Arc::new(AppState {
            model: ModelSlot::default(),
            sessions: Sessions::new(Some(config.data_dir.join("sessions")), config.chat.clone()),
            settings: Mutex::new(SettingsStore::open(config.data_dir.join("settings.json"))?),
            heartbeat: config.heartbeat,
        }))
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn err(code: StatusCode, msg: impl Into<String>) -> ApiError {
    ApiError(code, msg.into())
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| err(StatusCode::BAD_REQUEST, e.to_string()))
}

fn ready_engine(state: &AppState) -> Result<Arc<Engine>, ApiError> {
    state
        .model
        .engine()
        .ok_or_else(|| err(StatusCode::SERVICE_UNAVAILABLE, "model not ready"))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/model/status", get(model_status))
        .route("/api/sessions", post(create_session))
        .route(
            "/api/chat",
            post(chat).layer(DefaultBodyLimit::max(CHAT_BODY_LIMIT)),
        )
        .route("/api/chat/cancel", post(cancel))
        .route("/api/chat/stream", get(chat_stream))
        .route("/api/chat/history", get(history))
        .route(
            "/api/settings",
            get(get_settings)
                .post(post_settings)
                .layer(DefaultBodyLimit::max(SETTINGS_BODY_LIMIT)),
        )
        .with_state(state)
}

async fn model_status(State(s): State<Arc<AppState>>) -> Json<ModelStatus> {
    Json(s.model.status())
}

async fn create_session(State(s): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    let engine = ready_engine(&s)?;
    let id = s.sessions.new_id();
    s.sessions
        .create(&id, engine)
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatRequest {
    session_id: Option<String>,
    prompt: String,
}

fn lookup(s: &AppState, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
    s.sessions
        .get(id, s.model.engine().as_ref())
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

async fn chat(State(s): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: ChatRequest = parse(&body)?;
    let engine = ready_engine(&s)?;
    let id = req.session_id.unwrap_or_else(|| s.sessions.new_id());
    if !valid_id(&id) {
        return Err(err(StatusCode::BAD_REQUEST, "session_id must be 1-64 of [A-Za-z0-9_-]"));
    }
    let entry = match s.sessions.get(&id, Some(&engine)) {
        Some(e) => e,
        None => s
            .sessions
            .create(&id, engine)
            .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
    };
    let sink = entry.clone();
    match entry.session.submit(&req.prompt, move |e| sink.publish(e)) {
        Ok(_) => Ok((
            StatusCode::ACCEPTED,
            Json(json!({
                "session_id": id,
                "stream": format!("/api/chat/stream?session_id={id}"),
            })),
        )),
        Err(stlm_core::Error::Busy) => Err(err(StatusCode::CONFLICT, "a reply is still being generated")),
        Err(e @ (stlm_core::Error::InvalidInput(_) | stlm_core::Error::ContextFull { .. })) => {
            Err(err(StatusCode::BAD_REQUEST, e.to_string()))
        }
        Err(e) => Err(err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRef {
    session_id: String,
}

async fn cancel(State(s): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: SessionRef = parse(&body)?;
    let entry = lookup(&s, &req.session_id)?;
    match entry.session.cancel() {
        Ok(()) => Ok(Json(json!({ "cancelled": true }))),
        Err(e) => Err(err(StatusCode::CONFLICT, e.to_string())),
    }
}

async fn history(
    State(s): State<Arc<AppState>>,
    Query(q): Query<SessionRef>,
) -> Result<impl IntoResponse, ApiError> {
    let entry = lookup(&s, &q.session_id)?;
    Ok(Json(json!({ "turns": entry.session.turns(), "busy": entry.session.is_busy() })))
}

async fn chat_stream(
    State(s): State<Arc<AppState>>,
    Query(q): Query<SessionRef>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let entry = lookup(&s, &q.session_id)?;
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    let (backlog, rx) = entry.subscribe(last_id);
    let live = BroadcastStream::new(rx).filter_map(|r| async move { r.ok() });
    let events = stream::iter(backlog).chain(live).map(|e| {
        Ok(Event::default()
            .id(e.id.to_string())
            .event(e.name)
            .data(e.data.to_string()))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(s.heartbeat).text("heartbeat")))
}

async fn get_settings(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    let store = s.settings.lock().unwrap_or_else(|p| p.into_inner());
    Json(store.get().clone())
}

async fn post_settings(State(s): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let patch: SettingsPatch = parse(&body)?;
    let mut store = s.settings.lock().unwrap_or_else(|p| p.into_inner());
    let next = store
        .get()
        .apply(patch)
        .map_err(|m| err(StatusCode::BAD_REQUEST, m))?;
    store
        .set(next.clone())
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(next))
}

/// Binds, starts model preparation in the background and serves until the
/// returned task is dropped or fails.
pub async fn spawn(
    config: ServerConfig,
    addr: SocketAddr,
) -> anyhow::Result<(SocketAddr, Arc<AppState>, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let state = AppState::new(&config)?;
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let preparing = state.clone();
    let source = config.source;
    tokio::task::spawn_blocking(move || preparing.model.prepare(&source));
    let app = router(state.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((local, state, server))
}
