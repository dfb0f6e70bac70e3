use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use kpi2kvi_core::agents::{CompletionRequest, Exhaustion, Playbook, Provider, ProviderError, ScriptedProvider};
use kpi2kvi_core::eval::{load_cases, CaseSpec};
use kpi2kvi_core::orchestrator::{create_session_with_id, handle_user_turn, FileStore, MemoryStore, SessionStore, Workflow};
use kpi2kvi_server::{router, AppState, ServerConfig, HEARTBEAT_FRAME};
use serde_json::{json, Value};
use tower::ServiceExt;

fn telemedicine() -> (CaseSpec, Playbook) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/cases");
    load_cases(&dir).unwrap().into_iter().find(|(c, _)| c.case_id == "telemedicine").unwrap()
}

fn app_with(store: Arc<dyn SessionStore>, provider: Arc<dyn Provider>, config: ServerConfig) -> Router {
    router(AppState::new(store, provider, Workflow::fixture(), config.heartbeat), &config)
}

fn scripted(pb: &Playbook) -> Arc<dyn Provider> {
    Arc::new(ScriptedProvider::new(pb, Exhaustion::Fail).unwrap())
}

async fn send(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, String, Option<String>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap(), ctype)
}

async fn create(app: &Router, body: &str) -> String {
    let (status, text, _) = send(app, "POST", "/api/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{text}");
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["stage"], 1);
    v["session_id"].as_str().unwrap().to_string()
}

fn post_message(id: &str, msg: &str) -> Request<Body> {
    Request::builder()
        .method("POST")
        .uri(format!("/api/sessions/{id}/messages"))
        .body(Body::from(json!({ "message": msg }).to_string()))
        .unwrap()
}

fn frames(stream: &str) -> Vec<&str> {
    stream.split_inclusive("\n\n").filter(|f| *f != HEARTBEAT_FRAME).collect()
}

#[tokio::test]
async fn session_creation() {
    let (_, pb) = telemedicine();
    let app = app_with(Arc::new(MemoryStore::new()), scripted(&pb), ServerConfig::default());

    let a = create(&app, r#"{"description": "video consultations"}"#).await;
    let b = create(&app, "").await;
    assert_ne!(a, b);

    let (status, text, _) = send(&app, "GET", &format!("/api/sessions/{b}/artifacts"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap(), json!({ "stage": 1, "artifacts": {} }));

    let (status, _, _) = send(&app, "POST", "/api/sessions", "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_sessions_and_bad_bodies() {
    let (_, pb) = telemedicine();
    let app = app_with(Arc::new(MemoryStore::new()), scripted(&pb), ServerConfig::default());
    let (status, _, _) = send(&app, "POST", "/api/sessions/nope/messages", r#"{"message": "hi"}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = send(&app, "GET", "/api/sessions/nope/artifacts", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = create(&app, "").await;
    let (status, _, _) = send(&app, "POST", &format!("/api/sessions/{id}/messages"), r#"{"text": 1}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    // a rejected body must not leave the session marked busy
    let (status, _, _) = send(&app, "POST", &format!("/api/sessions/{id}/messages"), r#"{"message": "x"}"#).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn golden_replay_over_http() {
    let (case, pb) = telemedicine();
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FileStore::new(dir.path()).unwrap());
    let app = app_with(store.clone(), scripted(&pb), ServerConfig::default());
    let id = create(&app, &json!({ "description": case.description }).to_string()).await;

    let mut http_frames = Vec::new();
    for m in &case.messages {
        let (status, text, ctype) =
            send(&app, "POST", &format!("/api/sessions/{id}/messages"), &json!({ "message": m }).to_string()).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ctype.as_deref(), Some("text/event-stream"));
        let fs = frames(&text);
        assert!(fs.last().unwrap().starts_with("event: done\n"), "{text}");
        assert_eq!(fs.iter().filter(|f| f.starts_with("event: done\n")).count(), 1);
        http_frames.extend(fs.into_iter().map(str::to_string));
    }

    // Same frames as the orchestrator emits directly; session ids differ,
    // so both sides are masked.
    let provider = ScriptedProvider::new(&pb, Exhaustion::Fail).unwrap();
    let mut s = create_session_with_id("direct", Some(&case.description));
    let mut direct = Vec::new();
    for m in &case.messages {
        direct.extend(handle_user_turn(&mut s, m, &provider, &Workflow::fixture()).iter().map(|e| e.to_sse("direct")));
    }
    let mask = |fs: &[String], sid: &str| -> Vec<String> {
        fs.iter().map(|f| f.replace(&format!("\"session_id\":\"{sid}\""), "\"session_id\":\"*\"")).collect()
    };
    assert_eq!(mask(&http_frames, &id), mask(&direct, "direct"));

    let (_, snap1, _) = send(&app, "GET", &format!("/api/sessions/{id}/artifacts"), "").await;
    let (_, snap2, _) = send(&app, "GET", &format!("/api/sessions/{id}/artifacts"), "").await;
    assert_eq!(snap1, snap2);
    let snap: Value = serde_json::from_str(&snap1).unwrap();
    assert_eq!(snap["stage"], 9);
    let keys: Vec<&str> = snap["artifacts"].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        [
            "interview_transcript",
            "candidate_categories",
            "refinement_transcript",
            "finalized_categories",
            "kpi_plan",
            "kpi_collection_transcript",
            "kpi_table",
            "kvi_result:PUC-UPCA",
            "kvi_result:PUC-USCA",
            "kvi_result:RPS-DDSS",
        ]
    );
    let file: Value = serde_json::from_str(&std::fs::read_to_string(store.path_for(&id)).unwrap()).unwrap();
    assert_eq!(snap["artifacts"], file["artifacts"]);
    assert_eq!(snap["artifacts"], serde_json::to_value(&s.artifacts).unwrap());
}

#[tokio::test]
async fn provider_failure_streams_error_then_done() {
    let app = app_with(Arc::new(MemoryStore::new()), scripted(&Playbook::default()), ServerConfig::default());
    let id = create(&app, "").await;
    let (status, text, _) = send(&app, "POST", &format!("/api/sessions/{id}/messages"), r#"{"message": "hello"}"#).await;
    assert_eq!(status, StatusCode::OK);
    let fs = frames(&text);
    let n = fs.len();
    assert!(n >= 2);
    assert!(fs[n - 2].starts_with("event: error\n"), "{text}");
    assert!(fs[n - 2].contains("\"kind\":\"provider\""));
    assert!(fs[n - 1].starts_with("event: done\n"));
}

/// Blocks every call until opened.
struct Gate {
    open: Mutex<bool>,
    cv: Condvar,
    inner: ScriptedProvider,
}

impl Gate {
    fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl Provider for Gate {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        drop(open);
        self.inner.complete(request)
    }

    fn label(&self) -> String {
        "gate".into()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn busy_session_conflicts_and_heartbeats_flow() {
    let (case, pb) = telemedicine();
    let gate = Arc::new(Gate { open: Mutex::new(false), cv: Condvar::new(), inner: ScriptedProvider::new(&pb, Exhaustion::Fail).unwrap() });
    let config = ServerConfig { heartbeat: Duration::from_millis(20), cors_origin: None };
    let app = app_with(Arc::new(MemoryStore::new()), gate.clone(), config);
    let id = create(&app, &json!({ "description": case.description }).to_string()).await;
    let other = create(&app, "").await;

    let first = app.clone().oneshot(post_message(&id, &case.messages[0])).await.unwrap();
    assert_eq!(first.status(), StatusCode::OK);
    let second = app.clone().oneshot(post_message(&id, "again")).await.unwrap();
    assert_eq!(second.status(), StatusCode::CONFLICT);
    // other sessions stay responsive
    let (status, _, _) = send(&app, "GET", &format!("/api/sessions/{other}/artifacts"), "").await;
    assert_eq!(status, StatusCode::OK);

    tokio::time::sleep(Duration::from_millis(120)).await;
    gate.open();
    let text = String::from_utf8(first.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    assert!(text.starts_with(HEARTBEAT_FRAME), "{text}");
    assert!(frames(&text).last().unwrap().starts_with("event: done\n"));

    // the busy mark is gone once the stream has finished
    let again = app.clone().oneshot(post_message(&id, &case.messages[1])).await.unwrap();
    assert_eq!(again.status(), StatusCode::OK);
    let _ = again.into_body().collect().await.unwrap();
}

#[tokio::test]
async fn cors_origin_is_configurable() {
    let (_, pb) = telemedicine();
    let config = ServerConfig { cors_origin: Some("http://localhost:5173".into()), ..ServerConfig::default() };
    let app = app_with(Arc::new(MemoryStore::new()), scripted(&pb), config);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/sessions")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");

    let plain = app_with(Arc::new(MemoryStore::new()), scripted(&pb), ServerConfig::default());
    let req = Request::builder()
        .method("POST")
        .uri("/api/sessions")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = plain.oneshot(req).await.unwrap();
    assert!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}
