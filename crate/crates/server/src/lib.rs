//! HTTP service over the orchestrator.
//!
//! Routes:
//! - `POST /api/sessions` creates a session, body `{"description": str}` or empty.
//! - `POST /api/sessions/{id}/messages` runs one user turn, streamed as SSE.
//! - `GET /api/sessions/{id}/artifacts` returns the persisted artifact store.
//!
//! A dropped stream does not cancel the turn. Clients that reconnect should
//! re-fetch the artifacts before resending anything.

use std::collections::HashSet;
use std::convert::Infallible;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::channel::mpsc as body_mpsc;
use kpi2kvi_core::orchestrator::{
    create_session, handle_user_turn_with, Event, EventKind, SessionState, SessionStore, StoreError, Workflow,
};
use kpi2kvi_core::Provider;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;
use tower_http::cors::CorsLayer;

pub const HEARTBEAT_FRAME: &str = ": heartbeat\n\n";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub heartbeat: Duration,
    /// Origin allowed by CORS, e.g. the UI dev server.
    pub cors_origin: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { heartbeat: Duration::from_secs(15), cors_origin: None }
    }
}

impl ServerConfig {
    /// Reads `KPI2KVI_CORS_ORIGIN`.
    pub fn from_env() -> Self {
        ServerConfig {
            cors_origin: std::env::var("KPI2KVI_CORS_ORIGIN").ok().filter(|o| !o.is_empty()),
            ..Self::default()
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<dyn SessionStore>,
    provider: Arc<dyn Provider>,
    workflow: Arc<Workflow>,
    busy: Arc<Mutex<HashSet<String>>>,
    heartbeat: Duration,
}

impl AppState {
    pub fn new(store: Arc<dyn SessionStore>, provider: Arc<dyn Provider>, workflow: Workflow, heartbeat: Duration) -> Self {
        AppState { store, provider, workflow: Arc::new(workflow), busy: Arc::default(), heartbeat }
    }
}

pub fn router(state: AppState, config: &ServerConfig) -> Router {
    let app = Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}/messages", post(message))
        .route("/api/sessions/{id}/artifacts", get(artifacts))
        .with_state(state);
    match config.cors_origin.as_deref().and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => app.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        ),
        None => app,
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: std::net::SocketAddr, state: AppState, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, &config)).await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn store_error(e: StoreError) -> Response {
    match e {
        StoreError::NotFound(_) => error(StatusCode::NOT_FOUND, e.to_string()),
        other => {
            tracing::error!(error = %other, "session store");
            error(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
        }
    }
}

#[derive(Deserialize)]
struct CreateBody {
    description: Option<String>,
}

async fn create(State(st): State<AppState>, body: Bytes) -> Response {
    let description = if body.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        match serde_json::from_slice::<CreateBody>(&body) {
            Ok(b) => b.description,
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
        }
    };
    let session = create_session(description.as_deref().filter(|d| !d.trim().is_empty()));
    let store = st.store.clone();
    let saved = {
        let session = session.clone();
        tokio::task::spawn_blocking(move || store.save(&session)).await.expect("store task")
    };
    if let Err(e) = saved {
        return store_error(e);
    }
    tracing::info!(session = %session.session_id, "created");
    (StatusCode::CREATED, Json(json!({ "session_id": session.session_id, "stage": session.stage_index })))
        .into_response()
}

async fn artifacts(State(st): State<AppState>, Path(id): Path<String>) -> Response {
    let store = st.store.clone();
    match tokio::task::spawn_blocking(move || store.load(&id)).await.expect("store task") {
        Ok(s) => Json(json!({ "stage": s.stage_index, "artifacts": s.artifacts })).into_response(),
        Err(e) => store_error(e),
    }
}

#[derive(Deserialize)]
struct MessageBody {
    message: String,
}

/// Marks a session busy until dropped.
struct BusyGuard {
    set: Arc<Mutex<HashSet<String>>>,
    id: String,
}

impl BusyGuard {
    fn acquire(set: &Arc<Mutex<HashSet<String>>>, id: &str) -> Option<BusyGuard> {
        set.lock().unwrap().insert(id.to_string()).then(|| BusyGuard { set: set.clone(), id: id.to_string() })
    }
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.set.lock().unwrap().remove(&self.id);
    }
}

async fn message(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let msg = match serde_json::from_slice::<MessageBody>(&body) {
        Ok(b) => b.message,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let Some(guard) = BusyGuard::acquire(&st.busy, &id) else {
        return error(StatusCode::CONFLICT, format!("session {id} is processing a turn"));
    };
    let store = st.store.clone();
    let session = {
        let id = id.clone();
        tokio::task::spawn_blocking(move || store.load(&id)).await.expect("store task")
    };
    let session = match session {
        Ok(s) => s,
        Err(e) => return store_error(e),
    };

    let (frames_tx, frames_rx) = mpsc::unbounded_channel::<String>();
    let heartbeat = st.heartbeat;
    tokio::task::spawn_blocking(move || run_turn(st, session, msg, guard, frames_tx));
    let body_rx = forward(frames_rx, heartbeat);
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(body_rx))
        .expect("static response parts")
}

/// Runs the turn on a blocking thread. The `done` frame is held back until
/// the session is saved and the busy mark is cleared.
fn run_turn(st: AppState, mut session: SessionState, msg: String, guard: BusyGuard, tx: mpsc::UnboundedSender<String>) {
    let sid = session.session_id.clone();
    let mut done: Option<Event> = None;
    handle_user_turn_with(&mut session, &msg, st.provider.as_ref(), &st.workflow, &mut |e: &Event| {
        if e.kind == EventKind::Done {
            done = Some(e.clone());
        } else {
            let _ = tx.send(e.to_sse(&sid));
        }
    });
    if let Err(e) = st.store.save(&session) {
        tracing::error!(session = %sid, error = %e, "save failed");
        let ev = Event {
            kind: EventKind::Error,
            agent: session.current_agent,
            stage: session.stage_index,
            payload: json!({ "message": e.to_string(), "retriable": true, "kind": "store" }),
        };
        let _ = tx.send(ev.to_sse(&sid));
    }
    drop(guard);
    if let Some(d) = done {
        let _ = tx.send(d.to_sse(&sid));
    }
}

/// Relays frames to the response body, adding heartbeat comments while the
/// turn is quiet. The body ends when the turn's sender is dropped.
fn forward(
    mut frames: mpsc::UnboundedReceiver<String>,
    every: Duration,
) -> body_mpsc::UnboundedReceiver<Result<Bytes, Infallible>> {
    let (body_tx, body_rx) = body_mpsc::unbounded();
    tokio::spawn(async move {
        loop {
            tokio::select! {
                frame = frames.recv() => match frame {
                    Some(f) => {
                        if body_tx.unbounded_send(Ok(Bytes::from(f))).is_err() {
                            break;
                        }
                    }
                    None => break,
                },
                _ = tokio::time::sleep(every) => {
                    if body_tx.unbounded_send(Ok(Bytes::from_static(HEARTBEAT_FRAME.as_bytes()))).is_err() {
                        break;
                    }
                }
            }
        }
    });
    body_rx
}
