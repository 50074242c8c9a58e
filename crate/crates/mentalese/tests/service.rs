//! HTTP routes driven in-process through the router.

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mentalese::backend::{BackendConfig, BackendKind};
use mentalese::record::ServiceConfig;
use mentalese::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig { persistence_dir: dir.to_path_buf(), render_count: 2, ..ServiceConfig::default() }
}

fn app(config: ServiceConfig) -> Router {
    router(Arc::new(AppState::new(config).expect("service starts")))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = call_raw(app, method, uri, body.map(|b| b.to_string())).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into())) };
    (status, value)
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>, Option<String>) {
    let request = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let response = app.clone().oneshot(request).await.expect("router responds");
    let status = response.status();
    let content_type = response.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, content_type)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, record) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", record);
    record["session_id"].as_str().expect("session id").to_string()
}

fn small_budget() -> Value {
    json!({ "target_accepted": 200, "max_attempts": 100000 })
}

#[tokio::test]
async fn lists_the_five_worlds() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path()));
    let (status, worlds) = call(&app, "GET", "/worlds", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = worlds.as_array().unwrap().iter().map(|w| w["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["tug-of-war", "kinship", "scenes-static", "scenes-physics", "agents"]);
    assert!(worlds.as_array().unwrap().iter().all(|w| w["title"].is_string() && w["render_kind"].is_string()));
}

#[tokio::test]
async fn session_creation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path()));
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "world": "chess" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("chess"));
    let (status, _, _) = call_raw(&app, "POST", "/sessions", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({ "world": "kinship", "colour": "red" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({ "world": "kinship", "budget": { "target_accepted": 0, "max_attempts": 10 } }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/sessions/nope/utterances", Some(json!({ "tag": "query", "text": "x" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn utterances_and_their_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path()));
    let id = create(&app, json!({ "world": "tug-of-war", "seed": 42, "budget": small_budget() })).await;
    let url = format!("/sessions/{}/utterances", id);

    let (status, entry) = call(&app, "POST", &url, Some(json!({ "tag": "condition", "text": "Josh won against Lio." }))).await;
    assert_eq!(status, StatusCode::OK, "{}", entry);
    assert_eq!(entry["result"]["kind"], "none");
    assert_eq!(entry["code"], "(condition (won-against '(josh) '(lio)))");

    let (status, entry) = call(&app, "POST", &url, Some(json!({ "tag": "query", "text": "Would Gabe beat Josh?" }))).await;
    assert_eq!(status, StatusCode::OK, "{}", entry);
    assert_eq!(entry["result"]["kind"], "posterior");
    assert_eq!(entry["result"]["summary"]["kind"], "boolean-probability");
    assert_eq!(entry["result"]["summary"]["n"], 200);

    // Request-level failures record nothing.
    let (status, _) = call(&app, "POST", &url, Some(json!({ "tag": "query", "text": "Would Gabe beat Josh?", "override_candidate": 99 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &url, Some(json!({ "words": "hello" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, record) = call(&app, "GET", &format!("/sessions/{}", id), None).await;
    assert_eq!(record["entries"].as_array().unwrap().len(), 2);

    // Dialogue failures are recorded as error entries.
    let (status, entry) = call(&app, "POST", &url, Some(json!({ "tag": "condition", "text": "The moon is made of cheese." }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}", entry);
    assert_eq!(entry["result"]["error"]["kind"], "no-valid-candidate");
    assert!(!entry["candidates"].as_array().unwrap().is_empty());

    let (status, entry) = call(&app, "POST", &url, Some(json!({ "code": "(condition (> (strength 'josh) 1000))" }))).await;
    assert_eq!(status, StatusCode::OK, "{}", entry);
    assert_eq!(entry["source"], "direct");
    let (status, entry) = call(&app, "POST", &url, Some(json!({ "code": "(query (strength 'josh))" }))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{}", entry);
    assert_eq!(entry["result"]["error"]["kind"], "zero-acceptance");
    assert_eq!(entry["result"]["error"]["diagnostics"]["attempts"], 100000);

    let (_, record) = call(&app, "GET", &format!("/sessions/{}", id), None).await;
    let entries = record["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 5);
    assert!(entries.iter().enumerate().all(|(i, e)| e["index"] == i));
}

#[tokio::test]
async fn equal_seeds_give_distinct_sessions_with_equal_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path()));
    let mut results = Vec::new();
    let mut ids = Vec::new();
    for _ in 0..2 {
        let id = create(&app, json!({ "world": "tug-of-war", "seed": 42, "budget": small_budget() })).await;
        let url = format!("/sessions/{}/utterances", id);
        call(&app, "POST", &url, Some(json!({ "tag": "condition", "text": "Josh won against Lio." }))).await;
        let (_, entry) = call(&app, "POST", &url, Some(json!({ "tag": "query", "text": "How strong is Josh?" }))).await;
        results.push(entry["result"].clone());
        ids.push(id);
    }
    assert_ne!(ids[0], ids[1]);
    assert_eq!(results[0], results[1]);
}

#[tokio::test]
async fn renders_conditioned_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path()));
    let id = create(&app, json!({ "world": "scenes-static", "seed": 5, "budget": small_budget() })).await;
    let (status, entry) = call(&app, "POST", &format!("/sessions/{}/utterances", id), Some(json!({ "tag": "condition", "text": "There's a blue thing." }))).await;
    assert_eq!(status, StatusCode::OK, "{}", entry);
    let renders = entry["renders"].as_array().unwrap();
    assert_eq!(renders.len(), 2);
    for (k, render) in renders.iter().enumerate() {
        let (status, svg, content_type) = call_raw(&app, "GET", &format!("/sessions/{}/entries/0/render?k={}", id, k), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(content_type.as_deref(), Some("image/svg+xml"));
        assert!(String::from_utf8(svg).unwrap().starts_with("<svg"));
        let description: Value = serde_json::from_slice(&std::fs::read(dir.path().join(render["json"].as_str().unwrap())).unwrap()).unwrap();
        let colors: Vec<&Value> = description["entities"].as_array().unwrap().iter().map(|e| &e["color"]).collect();
        assert!(colors.contains(&&json!([0, 0, 255])), "render {} has no blue object: {:?}", k, colors);
    }
    let (status, _) = call(&app, "GET", &format!("/sessions/{}/entries/0/render?k=7", id), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", &format!("/sessions/{}/entries/3/render", id), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = app(config(dir.path()));
    let id = create(&first, json!({ "world": "tug-of-war", "seed": 9, "budget": small_budget() })).await;
    let url = format!("/sessions/{}/utterances", id);
    call(&first, "POST", &url, Some(json!({ "tag": "condition", "text": "Josh won against Lio." }))).await;
    let (_, before) = call(&first, "GET", &format!("/sessions/{}", id), None).await;
    drop(first);

    let second = app(config(dir.path()));
    let (status, after) = call(&second, "GET", &format!("/sessions/{}", id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    // The restored session still carries the condition.
    let (_, restored) = call(&second, "POST", &url, Some(json!({ "code": "(query (strength 'josh))" }))).await;
    let fresh = app(config(tempfile::tempdir().unwrap().path()));
    let other = create(&fresh, json!({ "world": "tug-of-war", "seed": 9, "budget": small_budget() })).await;
    let other_url = format!("/sessions/{}/utterances", other);
    call(&fresh, "POST", &other_url, Some(json!({ "tag": "condition", "text": "Josh won against Lio." }))).await;
    let (_, expected) = call(&fresh, "POST", &other_url, Some(json!({ "code": "(query (strength 'josh))" }))).await;
    assert_eq!(restored["result"], expected["result"]);
    assert_eq!(restored["index"], 1);
}

#[tokio::test]
async fn unreadable_transcripts_stop_startup() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.jsonl"), "{\"schema_version\": 99}\n").unwrap();
    let err = AppState::new(config(dir.path())).err().expect("startup fails");
    assert!(err.to_string().contains("broken.jsonl"), "{}", err);
}

#[tokio::test]
async fn serves_static_files_beside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let site = tempfile::tempdir().unwrap();
    std::fs::write(site.path().join("index.html"), "<p>ui</p>").unwrap();
    let app = app(ServiceConfig { static_dir: Some(site.path().to_path_buf()), ..config(dir.path()) });
    let (status, body, _) = call_raw(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>ui</p>");
    let (status, _) = call(&app, "GET", "/worlds", None).await;
    assert_eq!(status, StatusCode::OK);
}

/// A completion server that answers every request with `status` and `body`.
async fn fake_completions(status: StatusCode, body: &'static str) -> String {
    let route = axum::routing::post(move || async move { (status, body) });
    let server = Router::new().route("/completions", route);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, server).await.unwrap() });
    format!("http://{}", addr)
}

fn http_config(dir: &Path, base_url: String) -> ServiceConfig {
    let backend = BackendConfig { kind: BackendKind::Http, base_url: Some(base_url), model: Some("test".into()), timeout_secs: Some(5), ..BackendConfig::default() };
    ServiceConfig { backend, ..config(dir) }
}

#[tokio::test(flavor = "multi_thread")]
async fn backend_failures_map_to_bad_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let base = fake_completions(StatusCode::INTERNAL_SERVER_ERROR, "overloaded").await;
    let app = app(http_config(dir.path(), base));
    let id = create(&app, json!({ "world": "tug-of-war", "seed": 1 })).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{}/utterances", id), Some(json!({ "tag": "condition", "text": "Josh won against Lio." }))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{}", body);
    let (_, record) = call(&app, "GET", &format!("/sessions/{}", id), None).await;
    assert!(record["entries"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn http_backend_completions_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"choices":[{"text":" (condition (won-against '(josh) '(lio)))\n\n;; Query: next"},{"text":"(condition (beats josh))"}]}"#;
    let base = fake_completions(StatusCode::OK, body).await;
    let app = app(http_config(dir.path(), base));
    let id = create(&app, json!({ "world": "tug-of-war", "seed": 1 })).await;
    let (status, entry) = call(&app, "POST", &format!("/sessions/{}/utterances", id), Some(json!({ "tag": "condition", "text": "Josh won against Lio." }))).await;
    assert_eq!(status, StatusCode::OK, "{}", entry);
    assert_eq!(entry["code"], "(condition (won-against '(josh) '(lio)))");
}

/// A running query holds its session's writer only: reads of the recorded
/// entries proceed, and a later utterance to the same session waits its turn.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reads_proceed_during_a_long_query() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path()));
    let id = create(&app, json!({ "world": "tug-of-war", "seed": 5, "budget": { "target_accepted": 10, "max_attempts": 1000000 } })).await;
    let url = format!("/sessions/{}/utterances", id);
    let (status, _) = call(&app, "POST", &url, Some(json!({ "code": "(condition (> (strength 'josh) 1000))" }))).await;
    assert_eq!(status, StatusCode::OK);

    let post = |code: &'static str| {
        let (app, url) = (app.clone(), url.clone());
        tokio::spawn(async move { call(&app, "POST", &url, Some(json!({ "code": code }))).await })
    };
    let slow = post("(query (strength 'gabe))");
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    let queued = post("(define pair '(josh gabe))");
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;

    let (status, record) = call(&app, "GET", &format!("/sessions/{}", id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["entries"].as_array().unwrap().len(), 1);
    assert!(!slow.is_finished(), "query finished before the read; the test proves nothing");
    assert!(!queued.is_finished());

    let (status, entry) = slow.await.unwrap();
    assert_eq!(status, StatusCode::CONFLICT, "{}", entry);
    assert_eq!(entry["index"], 1);
    let (status, entry) = queued.await.unwrap();
    assert_eq!(status, StatusCode::OK, "{}", entry);
    assert_eq!(entry["index"], 2);
}
