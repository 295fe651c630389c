//! The HTTP API driven in-process against the golden mock script.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use helmsman::app;
use helmsman::server::{router, ServiceState};
use helmsman_core::config::SystemConfig;
use helmsman_core::dataset::DatasetManifest;
use helmsman_core::trace::MemorySink;
use serde_json::{json, Value};
use tower::ServiceExt;

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

async fn service() -> Router {
    let g = golden();
    let config = SystemConfig::load(g.join("fixtures.toml")).unwrap();
    let rt = app::build_runtime(config, Some(&g.join("golden.json"))).unwrap();
    let kb = app::load_kb(&rt).await.unwrap();
    let clips = DatasetManifest::load(g.join("dataset.json")).unwrap();
    let state = ServiceState::new(
        rt.backends.clone(),
        kb,
        rt.config.engine_config(),
        rt.config.rag.chunking,
        Some(clips),
        Arc::new(MemorySink::default()),
        rt.clock(),
        false,
        true,
    );
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn session(app: &Router, clip_id: &str) -> String {
    let (s, v) = call(app, "POST", "/sessions", Some(json!({ "clip_id": clip_id }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_and_clips() {
    let app = service().await;
    let (s, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["mock"], true);
    assert!(v["kb_chunks"].as_u64().unwrap() > 0);
    let (_, v) = call(&app, "GET", "/clips", None).await;
    assert_eq!(v["clips"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn fast_vision_question_over_a_session() {
    let app = service().await;
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({ "clip_id": "c01" }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["frame_count"], 12);
    let id = v["session_id"].as_str().unwrap();
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/ask"), Some(json!({ "question": "Is there a boat ahead?" }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["route"], "FastVision");
    assert_eq!(v["used_fallback"], false);
    assert_eq!(v["rules"].as_array().unwrap().len(), 0);
    assert_eq!(v["answer"], "Yes, a motor boat is ahead on the starboard bow.");
    assert_eq!(v["latency_ms"], 2220);
}

#[tokio::test]
async fn trace_agrees_with_the_response() {
    let app = service().await;
    let id = session(&app, "c02").await;
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/ask"), Some(json!({ "question": "Will the ferry cross our course?" }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["retries"], 1);
    assert_eq!(v["verified"], true);
    assert_eq!(v["threshold"], 0.7);
    let scores: Vec<f64> = v["score_history"].as_array().unwrap().iter().map(|g| g["score"].as_f64().unwrap()).collect();
    assert_eq!(scores, [0.4, 0.8]);

    let (s, t) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["trace_degraded"], false);
    let records = t["records"].as_array().unwrap();
    let traced: Vec<f64> = records
        .iter()
        .filter(|r| r["stage"] == "grade")
        .map(|r| r["data"]["score"].as_f64().unwrap())
        .collect();
    assert_eq!(traced, scores);
    assert_eq!(records.iter().filter(|r| r["stage"] == "expand").count(), 1);
    assert!(records.iter().all(|r| r["session_id"] == id.as_str()));
}

#[tokio::test]
async fn search_returns_ranked_hits() {
    let app = service().await;
    let (s, v) = call(&app, "GET", "/kb/search?q=head-on&k=2", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["k"], 2);
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 2);
    assert!(hits[0]["score"].as_f64().unwrap() >= hits[1]["score"].as_f64().unwrap());
    let (s, v) = call(&app, "GET", "/kb/search?q=%20", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
    let (s, _) = call(&app, "GET", "/kb/search?k=2", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn ingest_replaces_the_knowledge_base() {
    let app = service().await;
    let docs = json!({ "documents": [{ "name": "notes", "text": "## Rule 9 Narrow channels\nKeep to the starboard side of the channel." }] });
    let (s, v) = call(&app, "POST", "/kb/ingest", Some(docs)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let chunks = v["chunks"].as_u64().unwrap();
    assert!(chunks >= 1);
    let (_, h) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(h["kb_chunks"].as_u64().unwrap(), chunks);
    let (_, r) = call(&app, "GET", "/kb/search?q=channel&k=5", None).await;
    assert_eq!(r["hits"].as_array().unwrap().len() as u64, chunks.min(5));

    let both = json!({ "corpus_dir": "x", "documents": [] });
    let (s, _) = call(&app, "POST", "/kb/ingest", Some(both)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/kb/ingest", Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn backend_failure_is_a_502_naming_the_role() {
    let app = service().await;
    let id = session(&app, "c03").await;
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/ask"), Some(json!({ "question": "How should we pass the moored barge?" }))).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["role"], "reasoner");
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let app = service().await;
    let (s, v) = call(&app, "POST", "/sessions/nope/ask", Some(json!({ "question": "hi" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (s, _) = call(&app, "GET", "/sessions/nope/trace", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "clip_id": "c99" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "clip": { "clip_id": "x", "frames": [] } }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "clipid": "c01" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = session(&app, "c01").await;
    let ask = format!("/sessions/{id}/ask");
    let (s, _) = call(&app, "POST", &ask, Some(json!({ "question": "  " }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &ask, Some(json!({ "q": "Is there a boat ahead?" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "POST", &ask, Some(json!({ "question": "Is there a boat ahead?", "overrides": { "route": "Sideways" } }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
}

#[tokio::test]
async fn route_override_skips_the_router() {
    let app = service().await;
    let id = session(&app, "c05").await;
    let body = json!({ "question": "What does a yellow special mark buoy mean?", "overrides": { "route": "FastRag", "verify": false } });
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/ask"), Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["route"], "FastRag");
    assert_eq!(v["rules"].as_array().unwrap().len(), 4);
    assert_eq!(v["score_history"].as_array().unwrap().len(), 0);
}
