use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use triage_core::artifact::load_model;
use triage_core::projection::{project_2d, ProjectedPoint};
use triage_core::store::{retrain, ServingModel, Source, TrainingStore};
use triage_core::{Classification, EngineConfig, Error, Event, LabeledEvent, Model, Result};

const REPLAY_DIR: &str = "replays";

/// One classified submission. Never modified after it is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub replay_id: String,
    pub capture_id: String,
    pub received_at: DateTime<Utc>,
    pub model_version_used: u64,
    pub events: Vec<Event>,
    pub classifications: Vec<Classification>,
    /// Indices into `events`, ascending by event id.
    pub order: Vec<usize>,
}

impl Replay {
    pub fn summary(&self) -> Summary {
        let mut per_class = BTreeMap::new();
        for c in &self.classifications {
            *per_class.entry(c.predicted.class_id.clone()).or_default() += 1;
        }
        Summary {
            total: self.classifications.len(),
            per_class,
            uncertain: self.classifications.iter().filter(|c| c.uncertain).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub per_class: BTreeMap<String, usize>,
    pub uncertain: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainOutcome {
    pub old_version: Option<u64>,
    pub new_version: u64,
    pub training_size: usize,
}

/// Held while a retrain runs; a second retrain is refused until it drops.
pub struct RetrainGuard<'a>(&'a AtomicBool);

impl Drop for RetrainGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub struct AppState {
    engine: EngineConfig,
    serving: ServingModel,
    store: Mutex<TrainingStore>,
    replays: RwLock<BTreeMap<u64, Arc<Replay>>>,
    next_replay: AtomicU64,
    retraining: AtomicBool,
    projection: Mutex<Option<(u64, Arc<Vec<ProjectedPoint>>)>>,
}

fn replay_number(id: &str) -> Option<u64> {
    id.strip_prefix("rp-")?.parse().ok()
}

impl AppState {
    /// A service over an existing store. The model artifact in the store
    /// directory, if any, becomes the serving model.
    pub fn new(store: TrainingStore, engine: EngineConfig) -> Result<AppState> {
        engine.validate()?;
        let model = match store.model_path() {
            Some(path) if path.exists() => Some(load_model(&path)?),
            _ => None,
        };
        let replays = match store.dir() {
            Some(dir) => load_replays(&dir.join(REPLAY_DIR))?,
            None => BTreeMap::new(),
        };
        let next = replays.keys().next_back().map_or(1, |n| n + 1);
        Ok(AppState {
            engine,
            serving: ServingModel::new(model),
            store: Mutex::new(store),
            replays: RwLock::new(replays),
            next_replay: AtomicU64::new(next),
            retraining: AtomicBool::new(false),
            projection: Mutex::new(None),
        })
    }

    pub fn open(dir: &Path, engine: EngineConfig) -> Result<AppState> {
        AppState::new(TrainingStore::open(dir)?, engine)
    }

    pub fn engine(&self) -> &EngineConfig {
        &self.engine
    }

    pub fn serving(&self) -> &ServingModel {
        &self.serving
    }

    pub fn model(&self) -> Option<Arc<Model>> {
        self.serving.snapshot()
    }

    pub fn with_store<R>(&self, f: impl FnOnce(&mut TrainingStore) -> R) -> R {
        f(&mut self.store.lock().expect("store lock poisoned"))
    }

    /// Imports seed rows into an empty store and trains the first model if
    /// none is loaded. Returns the number of rows imported.
    pub fn seed(&self, rows: Vec<LabeledEvent>) -> Result<usize> {
        let added = self.with_store(|store| {
            if store.is_empty() {
                store.append(rows, Source::Seed)
            } else {
                Ok(0)
            }
        })?;
        if self.model().is_none() && self.with_store(|s| !s.is_empty()) {
            self.retrain()?;
        }
        Ok(added)
    }

    pub fn try_begin_retrain(&self) -> Option<RetrainGuard<'_>> {
        self.retraining
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RetrainGuard(&self.retraining))
    }

    /// Retrains under an already-held guard.
    pub fn retrain_guarded(&self, _guard: &RetrainGuard<'_>) -> Result<RetrainOutcome> {
        let old_version = self.serving.version();
        let model = self.with_store(|store| retrain(store, &self.engine, &self.serving))?;
        Ok(RetrainOutcome {
            old_version,
            new_version: model.version(),
            training_size: model.training_size(),
        })
    }

    pub fn retrain(&self) -> Result<RetrainOutcome> {
        let guard = self
            .try_begin_retrain()
            .ok_or_else(|| Error::Fit("a retrain is already running".into()))?;
        self.retrain_guarded(&guard)
    }

    /// Classifies a submission against one model snapshot and records it.
    pub fn submit(&self, capture_id: String, events: Vec<Event>) -> Result<Arc<Replay>> {
        let batch = self.serving.classify_batch(&events)?;
        let classifications = batch.results.into_iter().collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..events.len()).collect();
        order.sort_by(|&a, &b| events[a].event_id.cmp(&events[b].event_id).then(a.cmp(&b)));
        let n = self.next_replay.fetch_add(1, Ordering::Relaxed);
        let replay = Arc::new(Replay {
            replay_id: format!("rp-{n:06}"),
            capture_id,
            received_at: Utc::now(),
            model_version_used: batch.model_version,
            events,
            classifications,
            order,
        });
        let dir = self.with_store(|s| s.dir().map(|d| d.join(REPLAY_DIR)));
        if let Some(dir) = dir {
            persist_replay(&dir, &replay)?;
        }
        self.replays.write().expect("replay lock poisoned").insert(n, replay.clone());
        Ok(replay)
    }

    pub fn replay(&self, replay_id: &str) -> Option<Arc<Replay>> {
        let n = replay_number(replay_id)?;
        self.replays.read().expect("replay lock poisoned").get(&n).cloned()
    }

    /// 2D projection of the serving model, computed once per version.
    pub fn projection(&self) -> Result<(u64, Arc<Vec<ProjectedPoint>>)> {
        let model = self.model().ok_or(Error::NoModel)?;
        let version = model.version();
        if let Some((v, points)) = self.projection.lock().expect("projection lock poisoned").as_ref() {
            if *v == version {
                return Ok((version, points.clone()));
            }
        }
        let points = Arc::new(project_2d(&model)?);
        let mut cache = self.projection.lock().expect("projection lock poisoned");
        if cache.as_ref().is_none_or(|(v, _)| *v < version) {
            *cache = Some((version, points.clone()));
        }
        Ok((version, points))
    }
}

fn persist_replay(dir: &Path, replay: &Replay) -> Result<()> {
    let io = |path: &Path, e: std::io::Error| Error::Io {
        path: path.to_owned(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(format!("{}.json", replay.replay_id));
    let tmp: PathBuf = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(replay)?).map_err(|e| io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))
}

fn load_replays(dir: &Path) -> Result<BTreeMap<u64, Arc<Replay>>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_owned(),
                source: e,
            })?
            .path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let replay: Replay = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        let n = replay_number(&replay.replay_id)
            .ok_or_else(|| Error::Integrity(format!("{}: bad replay id", path.display())))?;
        out.insert(n, Arc::new(replay));
    }
    Ok(out)
}
