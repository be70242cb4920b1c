mod common;

use std::collections::BTreeSet;

use axum::http::StatusCode;
use serde_json::{json, Value};
use triage_core::store::{Source, TrainingStore};
use triage_core::synthgen::ClassMix;
use triage_core::{Classification, EngineConfig, Event, Kind, Label, LabeledEvent};
use triage_service::AppState;

use common::{app, call, submission, trained_state, world};

fn ev(id: &str, code: &str, msg: &str) -> Event {
    Event {
        event_id: id.into(),
        error_code: code.into(),
        error_message: msg.into(),
        sql_type: "1".into(),
        sql_subtype: "1".into(),
        request_type: "Type1".into(),
        trace_excerpt: None,
    }
}

fn field(body: &Value) -> &str {
    body["error"]["field"].as_str().unwrap_or("<none>")
}

async fn all_items(app: &axum::Router, replay_id: &str, filter: &str) -> Vec<Value> {
    let mut out = Vec::new();
    for page in 1.. {
        let uri = format!("/v1/replays/{replay_id}/classifications?page={page}&page_size=1000{filter}");
        let (status, body) = call(app, "GET", &uri, None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let items = body["items"].as_array().unwrap().clone();
        if items.is_empty() {
            break;
        }
        out.extend(items);
    }
    out
}

#[tokio::test]
async fn no_model_gives_503() {
    let state = std::sync::Arc::new(AppState::new(TrainingStore::in_memory(), EngineConfig::default()).unwrap());
    let app = app(&state);
    let (status, body) = call(&app, "POST", "/v1/replays", Some(submission("cap", &[ev("e1", "1", "x")]))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "no_model");
    assert_eq!(call(&app, "GET", "/v1/model", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, "GET", "/v1/projection", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn submission_validation_names_the_field() {
    let state = trained_state();
    let app = app(&state);
    let good = ev("e0", "1", "lock wait timeout");

    let (status, body) = call(&app, "POST", "/v1/replays", Some(submission("cap", &[]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(field(&body), "events");

    let mut bad = serde_json::to_value(&good).unwrap();
    bad.as_object_mut().unwrap().remove("error_code");
    let body = json!({ "capture_id": "cap", "events": [good.clone(), bad] });
    let (status, body) = call(&app, "POST", "/v1/replays", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(field(&body), "events[1].error_code");

    let body = json!({ "events": [good.clone()] });
    assert_eq!(field(&call(&app, "POST", "/v1/replays", Some(body)).await.1), "capture_id");

    let body = json!({ "capture_id": "cap", "events": [good.clone(), {"event_id": "e2", "error_code": 5}] });
    assert_eq!(field(&call(&app, "POST", "/v1/replays", Some(body)).await.1), "events[1].error_code");

    let body = json!({ "capture_id": "cap", "events": [good.clone(), good.clone()] });
    assert_eq!(field(&call(&app, "POST", "/v1/replays", Some(body)).await.1), "events[1].event_id");

    let request = axum::http::Request::builder()
        .method("POST")
        .uri("/v1/replays")
        .body(axum::body::Body::from("{not json"))
        .unwrap();
    assert_eq!(common::call_raw(&app, request).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn replay_summary_and_filters() {
    let state = trained_state();
    let app = app(&state);
    let (events, _) = world().replay(3000, &ClassMix::Proportional, 0.05, 5).unwrap();
    let (status, receipt) = call(&app, "POST", "/v1/replays", Some(submission("cap-1", &events))).await;
    assert_eq!(status, StatusCode::OK, "{receipt}");
    assert_eq!(receipt["summary"]["total"], 3000);
    assert_eq!(receipt["model_version"], 1);
    let per_class_sum: u64 = receipt["summary"]["per_class"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(per_class_sum, 3000);

    // expected counts straight from the model
    let model = state.model().unwrap();
    let direct: Vec<Classification> = events.iter().map(|e| model.classify(e).unwrap()).collect();
    let uncertain_ids: BTreeSet<&str> = direct.iter().filter(|c| c.uncertain).map(|c| c.event_id.as_str()).collect();
    assert!(!uncertain_ids.is_empty());
    assert_eq!(receipt["summary"]["uncertain"], uncertain_ids.len());

    let id = receipt["replay_id"].as_str().unwrap();
    let uncertain = all_items(&app, id, "&uncertain=true").await;
    let got: BTreeSet<&str> = uncertain.iter().map(|i| i["event"]["event_id"].as_str().unwrap()).collect();
    assert_eq!(got, uncertain_ids);
    assert!(uncertain.iter().all(|i| i["classification"]["neighbors"].as_array().unwrap().len() == 11));

    let everything = all_items(&app, id, "").await;
    assert_eq!(everything.len(), 3000);
    let ids: Vec<&str> = everything.iter().map(|i| i["event"]["event_id"].as_str().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]), "ordered by event id");
    let certain = all_items(&app, id, "&uncertain=false").await;
    assert_eq!(certain.len() + uncertain.len(), 3000);

    let class = direct[0].predicted.class_id.clone();
    let expected = direct.iter().filter(|c| c.predicted.class_id == class).count();
    assert_eq!(all_items(&app, id, &format!("&class_id={class}")).await.len(), expected);

    let (_, page) = call(&app, "GET", &format!("/v1/replays/{id}/classifications?page=2&page_size=7"), None).await;
    assert_eq!(page["total"], 3000);
    let page_ids: Vec<&str> = page["items"].as_array().unwrap().iter().map(|i| i["event"]["event_id"].as_str().unwrap()).collect();
    assert_eq!(page_ids, ids[7..14].to_vec());

    let (status, _) = call(&app, "GET", "/v1/replays/rp-999999/classifications", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, "GET", &format!("/v1/replays/{id}/classifications?page_size=0"), None).await;
    assert_eq!((status, field(&body)), (StatusCode::BAD_REQUEST, "page_size"));
    let (status, body) = call(&app, "GET", &format!("/v1/replays/{id}/classifications?uncertain=maybe"), None).await;
    assert_eq!((status, field(&body)), (StatusCode::BAD_REQUEST, "query"));
}

fn correction(event: Event, predicted: &str, corrected: &str) -> Value {
    json!({
        "event": event,
        "predicted": Label::new(predicted, Kind::FalsePositive),
        "corrected": Label::new(corrected, Kind::FalsePositive),
        "operator_id": "op-7",
    })
}

#[tokio::test]
async fn corrections_append_without_retraining() {
    let state = trained_state();
    let app = app(&state);
    let before = state.with_store(|s| s.len());

    let (status, body) = call(&app, "POST", "/v1/corrections", Some(json!([]))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["accepted"], 0);

    let known = state.model().unwrap().class_counts().into_keys().next().unwrap();
    let body = json!([correction(ev("k1", "1", "lock wait timeout"), &known, &known)]);
    let (_, body) = call(&app, "POST", "/v1/corrections", Some(body)).await;
    assert_eq!(body["accepted"], 1);
    assert_eq!(body["new_classes"], json!([]));

    let body = json!([correction(ev("n1", "77", "brand new failure"), &known, "RC999")]);
    let (_, body) = call(&app, "POST", "/v1/corrections", Some(body)).await;
    assert_eq!(body["accepted"], 1);
    assert_eq!(body["new_classes"], json!(["RC999"]));
    assert_eq!(state.with_store(|s| s.rows().last().unwrap().source), Source::NewClass);

    let mut bad = correction(ev("b1", "1", "x"), &known, "RC1");
    bad["corrected"]["class_id"] = json!("");
    let (status, body) = call(&app, "POST", "/v1/corrections", Some(json!([bad]))).await;
    assert_eq!((status, field(&body)), (StatusCode::BAD_REQUEST, "[0].corrected.class_id"));
    let mut bad = correction(ev("b1", "1", "x"), &known, "RC1");
    bad.as_object_mut().unwrap().remove("operator_id");
    let (_, body) = call(&app, "POST", "/v1/corrections", Some(json!([correction(ev("ok", "1", "x"), &known, &known), bad]))).await;
    assert_eq!(field(&body), "[1].operator_id");

    assert_eq!(state.with_store(|s| s.len()), before + 2);
    assert_eq!(state.model().unwrap().version(), 1, "corrections never retrain");
}

#[tokio::test]
async fn retrain_increments_version_and_refuses_overlap() {
    let state = trained_state();
    let app = app(&state);
    let (status, body) = call(&app, "POST", "/v1/retrain", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["old_version"], 1);
    assert_eq!(body["new_version"], 2);
    assert_eq!(body["training_size"], state.with_store(|s| s.len()));

    let guard = state.try_begin_retrain().unwrap();
    let (status, body) = call(&app, "POST", "/v1/retrain", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "conflict");
    drop(guard);
    assert_eq!(call(&app, "POST", "/v1/retrain", None).await.1["new_version"], 3);
}

#[tokio::test]
async fn failed_retrain_keeps_old_state() {
    let mut store = TrainingStore::in_memory();
    let one_class: Vec<LabeledEvent> = (0..4)
        .map(|i| LabeledEvent::new(ev(&format!("s{i}"), "1", "lock wait"), Label::new("A", Kind::FalsePositive)))
        .collect();
    store.append(one_class, Source::Seed).unwrap();
    let state = std::sync::Arc::new(AppState::new(store, EngineConfig::default()).unwrap());
    let app = app(&state);
    let (status, body) = call(&app, "POST", "/v1/retrain", None).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR, "{body}");
    assert!(state.model().is_none());
    // the guard is released after a failure
    assert!(state.try_begin_retrain().is_some());
}

#[tokio::test]
async fn corrected_novel_class_is_learned() {
    let state = trained_state();
    let app = app(&state);
    let w = world();
    let (novel, truth) = w.replay(200, &ClassMix::Proportional, 1.0, 21).unwrap();
    let (_, receipt) = call(&app, "POST", "/v1/replays", Some(submission("phase-1", &novel))).await;
    assert!(receipt["summary"]["uncertain"].as_u64().unwrap() >= 160, "{receipt}");

    let id = receipt["replay_id"].as_str().unwrap();
    let flagged = all_items(&app, id, "&uncertain=true").await;
    let corrections: Vec<Value> = flagged
        .iter()
        .map(|item| {
            let event: Event = serde_json::from_value(item["event"].clone()).unwrap();
            let t = truth.iter().find(|t| t.event_id == event.event_id).unwrap();
            json!({
                "event": event,
                "predicted": item["classification"]["predicted"],
                "corrected": t.label,
                "operator_id": "op-1",
                "note": "new root cause",
            })
        })
        .collect();
    let (_, report) = call(&app, "POST", "/v1/corrections", Some(Value::Array(corrections))).await;
    assert_eq!(report["new_classes"].as_array().unwrap().len(), w.novel_class_ids().len());
    let (_, retrained) = call(&app, "POST", "/v1/retrain", None).await;
    assert_eq!(retrained["new_version"], 2);

    let (fresh, fresh_truth) = w.replay(200, &ClassMix::Proportional, 1.0, 22).unwrap();
    let (_, receipt) = call(&app, "POST", "/v1/replays", Some(submission("phase-2", &fresh))).await;
    assert_eq!(receipt["model_version"], 2);
    let items = all_items(&app, receipt["replay_id"].as_str().unwrap(), "").await;
    let threshold = EngineConfig::default().thresholds.min_confidence();
    for item in &items {
        let event_id = item["event"]["event_id"].as_str().unwrap();
        let t = fresh_truth.iter().find(|t| t.event_id == event_id).unwrap();
        let c = &item["classification"];
        assert_eq!(c["predicted"]["class_id"], json!(t.label.class_id), "{event_id}");
        assert!(c["confidence"].as_f64().unwrap() >= threshold, "{c}");
    }

    // the phase-1 results are not rewritten
    let again = all_items(&app, id, "&uncertain=true").await;
    assert_eq!(again, flagged);
}

#[tokio::test]
async fn model_info_echoes_config() {
    let state = trained_state();
    let app = app(&state);
    let (status, info) = call(&app, "GET", "/v1/model", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["version"], 1);
    assert_eq!(info["k"], 11);
    let store_classes = state.with_store(|s| s.classes());
    assert_eq!(info["classes"].as_array().unwrap().len(), store_classes.len());
    let total: u64 = info["classes"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).sum();
    assert_eq!(total, info["training_size"].as_u64().unwrap());
    assert_eq!(info["weights"], serde_json::to_value(&EngineConfig::default().weights).unwrap());
    assert_eq!(info["thresholds"], json!({"min_probability": 0.9, "min_confidence": 0.7}));
    assert_eq!(info["min_term_frequency"], 3);
}

#[tokio::test]
async fn projection_is_cached_per_version() {
    let state = trained_state();
    let app = app(&state);
    let (status, first) = call(&app, "GET", "/v1/projection", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["points"].as_array().unwrap().len(), state.model().unwrap().training_size());
    assert_eq!(call(&app, "GET", "/v1/projection", None).await.1, first);

    let known = state.model().unwrap().class_counts().into_keys().next().unwrap();
    let extra: Vec<Value> = (0..5)
        .map(|i| correction(ev(&format!("x{i}"), "5", &format!("volume identifier mismatch {i}")), &known, "RC900"))
        .collect();
    call(&app, "POST", "/v1/corrections", Some(Value::Array(extra))).await;
    call(&app, "POST", "/v1/retrain", None).await;
    let (_, second) = call(&app, "GET", "/v1/projection", None).await;
    assert_eq!(second["model_version"], 2);
    assert_eq!(second["points"].as_array().unwrap().len(), first["points"].as_array().unwrap().len() + 5);
    assert_ne!(second, first);
}

#[tokio::test]
async fn restart_restores_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = world().corpus();
    let (probe, _) = world().replay(100, &ClassMix::Proportional, 0.1, 9).unwrap();

    let (first, replay_id) = {
        let state = std::sync::Arc::new(AppState::open(dir.path(), EngineConfig::default()).unwrap());
        assert_eq!(state.seed(corpus.clone()).unwrap(), corpus.len());
        let app = app(&state);
        let (_, receipt) = call(&app, "POST", "/v1/replays", Some(submission("before", &probe))).await;
        let id = receipt["replay_id"].as_str().unwrap().to_owned();
        (all_items(&app, &id, "").await, id)
    };

    let state = std::sync::Arc::new(AppState::open(dir.path(), EngineConfig::default()).unwrap());
    assert_eq!(state.seed(corpus).unwrap(), 0, "existing store is not reseeded");
    assert_eq!(state.model().unwrap().version(), 1);
    let app = app(&state);
    assert_eq!(all_items(&app, &replay_id, "").await, first);
    let (_, receipt) = call(&app, "POST", "/v1/replays", Some(submission("after", &probe))).await;
    assert_ne!(receipt["replay_id"].as_str().unwrap(), replay_id);
    let again = all_items(&app, receipt["replay_id"].as_str().unwrap(), "").await;
    let strip = |items: &[Value]| items.iter().map(|i| i["classification"].clone()).collect::<Vec<_>>();
    assert_eq!(strip(&again), strip(&first));
}
