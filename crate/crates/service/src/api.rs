use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use triage_core::projection::ProjectedPoint;
use triage_core::store::{Correction, CorrectionReport};
use triage_core::types::{validate_event, validate_label};
use triage_core::{Classification, Event, FeatureWeights, Thresholds};

use crate::error::ApiError;
use crate::state::{AppState, RetrainOutcome, Summary};

/// Large enough for the biggest synchronous submission (about 200k events).
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;
pub const MAX_PAGE_SIZE: usize = 1000;
pub const DEFAULT_PAGE_SIZE: usize = 100;

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/replays", post(submit_replay))
        .route("/v1/replays/{id}/classifications", get(list_classifications))
        .route("/v1/corrections", post(submit_corrections))
        .route("/v1/retrain", post(retrain))
        .route("/v1/model", get(model_info))
        .route("/v1/projection", get(projection))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Runs blocking engine work off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

fn parse_json(body: &Bytes) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation("", format!("malformed JSON: {e}")))
}

fn object<'a>(value: &'a Value, at: &str) -> Result<&'a Map<String, Value>, ApiError> {
    value
        .as_object()
        .ok_or_else(|| ApiError::validation(at, "expected an object"))
}

fn array<'a>(value: Option<&'a Value>, at: &str) -> Result<&'a Vec<Value>, ApiError> {
    match value {
        Some(Value::Array(items)) => Ok(items),
        None | Some(Value::Null) => Err(ApiError::validation(at, "missing required field")),
        Some(_) => Err(ApiError::validation(at, "expected an array")),
    }
}

fn string(raw: &Map<String, Value>, key: &str, at: &str) -> Result<String, ApiError> {
    match raw.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(ApiError::validation(at, "must be a non-empty string")),
        None | Some(Value::Null) => Err(ApiError::validation(at, "missing required field")),
        Some(_) => Err(ApiError::validation(at, "expected a string")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReplayReceipt {
    pub replay_id: String,
    pub capture_id: String,
    pub received_at: DateTime<Utc>,
    pub model_version: u64,
    pub summary: Summary,
}

fn parse_submission(body: &Bytes) -> Result<(String, Vec<Event>), ApiError> {
    let value = parse_json(body)?;
    let raw = object(&value, "")?;
    let capture_id = string(raw, "capture_id", "capture_id")?;
    let items = array(raw.get("events"), "events")?;
    if items.is_empty() {
        return Err(ApiError::validation("events", "must contain at least one event"));
    }
    let mut events = Vec::with_capacity(items.len());
    let mut seen = std::collections::HashSet::new();
    for (i, item) in items.iter().enumerate() {
        let at = format!("events[{i}]");
        let event = validate_event(object(item, &at)?).map_err(|e| ApiError::from_engine_at(&at, e))?;
        if !seen.insert(event.event_id.clone()) {
            return Err(ApiError::validation(format!("{at}.event_id"), "duplicate event_id in submission"));
        }
        events.push(event);
    }
    Ok((capture_id, events))
}

async fn submit_replay(State(state): State<Shared>, body: Bytes) -> ApiResult<ReplayReceipt> {
    let (capture_id, events) = parse_submission(&body)?;
    if state.model().is_none() {
        return Err(ApiError::NoModel);
    }
    let replay = blocking(move || Ok(state.submit(capture_id, events)?)).await?;
    Ok(Json(ReplayReceipt {
        replay_id: replay.replay_id.clone(),
        capture_id: replay.capture_id.clone(),
        received_at: replay.received_at,
        model_version: replay.model_version_used,
        summary: replay.summary(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    uncertain: Option<bool>,
    class_id: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

/// One triage queue entry: the event, its classification and where it came from.
#[derive(Debug, Serialize, Deserialize)]
pub struct Item {
    pub replay_id: String,
    pub capture_id: String,
    pub event: Event,
    pub classification: Classification,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemPage {
    pub replay_id: String,
    pub model_version: u64,
    /// Items matching the filter across all pages.
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<Item>,
}

async fn list_classifications(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<ListQuery>, QueryRejection>,
) -> ApiResult<ItemPage> {
    let Query(q) = query.map_err(|e| ApiError::validation("query", e.body_text()))?;
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::validation("page", "pages start at 1"));
    }
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::validation("page_size", format!("must be between 1 and {MAX_PAGE_SIZE}")));
    }
    let replay = state
        .replay(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown replay `{id}`")))?;
    let matching: Vec<usize> = replay
        .order
        .iter()
        .copied()
        .filter(|&i| {
            let c = &replay.classifications[i];
            q.uncertain.is_none_or(|u| c.uncertain == u)
                && q.class_id.as_ref().is_none_or(|id| &c.predicted.class_id == id)
        })
        .collect();
    let items = matching
        .iter()
        .skip((page - 1).saturating_mul(page_size))
        .take(page_size)
        .map(|&i| Item {
            replay_id: replay.replay_id.clone(),
            capture_id: replay.capture_id.clone(),
            event: replay.events[i].clone(),
            classification: replay.classifications[i].clone(),
        })
        .collect();
    Ok(Json(ItemPage {
        replay_id: replay.replay_id.clone(),
        model_version: replay.model_version_used,
        total: matching.len(),
        page,
        page_size,
        items,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorrectionReceipt {
    pub accepted: usize,
    /// Submission positions whose content was already known.
    pub duplicates: Vec<usize>,
    pub new_classes: Vec<String>,
}

fn parse_corrections(body: &Bytes) -> Result<Vec<Correction>, ApiError> {
    let value = parse_json(body)?;
    let items = array(Some(&value), "")?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let at = format!("[{i}]");
            let raw = object(item, &at)?;
            let part = |key: &str| -> Result<&Map<String, Value>, ApiError> {
                let path = format!("{at}.{key}");
                match raw.get(key) {
                    None | Some(Value::Null) => Err(ApiError::validation(path, "missing required field")),
                    Some(v) => object(v, &path),
                }
            };
            let event = validate_event(part("event")?).map_err(|e| ApiError::from_engine_at(&format!("{at}.event"), e))?;
            let predicted =
                validate_label(part("predicted")?).map_err(|e| ApiError::from_engine_at(&format!("{at}.predicted"), e))?;
            let corrected =
                validate_label(part("corrected")?).map_err(|e| ApiError::from_engine_at(&format!("{at}.corrected"), e))?;
            let operator_id = string(raw, "operator_id", &format!("{at}.operator_id"))?;
            let note = match raw.get("note") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(ApiError::validation(format!("{at}.note"), "expected a string or null")),
            };
            Ok(Correction {
                event,
                predicted,
                corrected,
                operator_id,
                note,
            })
        })
        .collect()
}

async fn submit_corrections(State(state): State<Shared>, body: Bytes) -> ApiResult<CorrectionReceipt> {
    let corrections = parse_corrections(&body)?;
    let report: CorrectionReport =
        blocking(move || Ok(state.with_store(|s| s.add_corrections(&corrections))?)).await?;
    Ok(Json(CorrectionReceipt {
        accepted: report.added,
        duplicates: report.duplicates,
        new_classes: report.new_classes,
    }))
}

async fn retrain(State(state): State<Shared>) -> ApiResult<RetrainOutcome> {
    let outcome = blocking(move || {
        let guard = state
            .try_begin_retrain()
            .ok_or_else(|| ApiError::Conflict("a retrain is already running".into()))?;
        state
            .retrain_guarded(&guard)
            .map_err(|e| ApiError::Internal(format!("retrain failed, previous model kept: {e}")))
    })
    .await?;
    Ok(Json(outcome))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassCount {
    pub class_id: String,
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: u64,
    pub training_size: usize,
    pub classes: Vec<ClassCount>,
    pub weights: FeatureWeights,
    pub k: usize,
    pub thresholds: Thresholds,
    pub min_term_frequency: usize,
    pub created_at: DateTime<Utc>,
}

async fn model_info(State(state): State<Shared>) -> ApiResult<ModelInfo> {
    let model = state.model().ok_or(ApiError::NoModel)?;
    Ok(Json(ModelInfo {
        version: model.version(),
        training_size: model.training_size(),
        classes: model
            .class_counts()
            .into_iter()
            .map(|(class_id, count)| ClassCount { class_id, count })
            .collect(),
        weights: model.weights().clone(),
        k: model.k(),
        thresholds: model.thresholds(),
        min_term_frequency: model.vectorizer().min_term_frequency(),
        created_at: model.created_at(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Projection {
    pub model_version: u64,
    pub points: Vec<ProjectedPoint>,
}

async fn projection(State(state): State<Shared>) -> ApiResult<Projection> {
    if state.model().is_none() {
        return Err(ApiError::NoModel);
    }
    let (model_version, points) = blocking(move || {
        state.projection().map_err(|e| match e {
            triage_core::Error::NoModel => ApiError::NoModel,
            other => ApiError::Unprocessable(other.to_string()),
        })
    })
    .await?;
    Ok(Json(Projection {
        model_version,
        points: points.as_ref().clone(),
    }))
}
