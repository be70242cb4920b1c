#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use triage_core::store::{Source, TrainingStore};
use triage_core::synthgen::{CorpusSpec, World};
use triage_core::{EngineConfig, Event};
use triage_service::{router, AppState};

pub fn spec() -> CorpusSpec {
    CorpusSpec {
        n_events: 1500,
        ..CorpusSpec::default()
    }
}

pub fn world() -> World {
    World::new(&spec()).unwrap()
}

/// In-memory service trained on the default synthetic corpus.
pub fn trained_state() -> Arc<AppState> {
    let (corpus, _) = world().corpus();
    let mut store = TrainingStore::in_memory();
    store.append(corpus, Source::Seed).unwrap();
    let state = AppState::new(store, EngineConfig::default()).unwrap();
    state.retrain().unwrap();
    Arc::new(state)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    call_raw(app, request).await
}

pub async fn call_raw(app: &Router, request: Request<Body>) -> (StatusCode, Value) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

pub fn submission(capture_id: &str, events: &[Event]) -> Value {
    json!({ "capture_id": capture_id, "events": events })
}

pub fn app(state: &Arc<AppState>) -> Router {
    router(state.clone())
}
