//! Append-only training store, operator corrections, retraining, and the
//! atomically swapped serving model.
//!
//! On disk a store is a directory holding `training.jsonl` (one labeled
//! event per line plus `source` and `added_at`), `state.json` with the
//! current model version, and the latest `model.json.gz` artifact.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::artifact;
use crate::classifier::Model;
use crate::config::EngineConfig;
use crate::downsample::downsample;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::types::{validate_event, validate_label, Classification, Event, Label, LabeledEvent};

pub const TRAINING_FILE: &str = "training.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const MODEL_FILE: &str = "model.json.gz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Seed,
    Correction,
    NewClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRow {
    pub labeled: LabeledEvent,
    pub source: Source,
    pub added_at: DateTime<Utc>,
}

impl Serialize for StoredRow {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Flat<'a> {
            #[serde(flatten)]
            labeled: &'a LabeledEvent,
            source: Source,
            added_at: DateTime<Utc>,
        }
        Flat {
            labeled: &self.labeled,
            source: self.source,
            added_at: self.added_at,
        }
        .serialize(serializer)
    }
}

impl StoredRow {
    fn from_record(raw: &Map<String, Value>) -> Result<Self> {
        let labeled = LabeledEvent::new(validate_event(raw)?, validate_label(raw)?);
        let source = serde_json::from_value(raw.get("source").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::validation("source", e.to_string()))?;
        let added_at = serde_json::from_value(raw.get("added_at").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::validation("added_at", e.to_string()))?;
        Ok(StoredRow {
            labeled,
            source,
            added_at,
        })
    }
}

/// An operator's verdict on one classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub event: Event,
    pub predicted: Label,
    pub corrected: Label,
    pub operator_id: String,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub added: usize,
    /// Positions in the submission that repeat earlier content, either
    /// within the submission or already in the store.
    pub duplicates: Vec<usize>,
    /// Corrected class ids the store had not seen before, sorted.
    pub new_classes: Vec<String>,
}

type ContentKey = (String, String, String, String, String, Option<String>, Label);

fn content_key(le: &LabeledEvent) -> ContentKey {
    let e = &le.event;
    (
        e.error_code.clone(),
        e.error_message.clone(),
        e.sql_type.clone(),
        e.sql_subtype.clone(),
        e.request_type.clone(),
        e.trace_excerpt.clone(),
        le.label.clone(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreState {
    current_model_version: u64,
}

#[derive(Debug)]
pub struct TrainingStore {
    dir: Option<PathBuf>,
    rows: Vec<StoredRow>,
    current_model_version: u64,
}

impl TrainingStore {
    pub fn in_memory() -> Self {
        TrainingStore {
            dir: None,
            rows: Vec::new(),
            current_model_version: 0,
        }
    }

    /// Opens (creating if needed) a store directory.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let training = dir.join(TRAINING_FILE);
        let mut rows = Vec::new();
        if training.exists() {
            let file = File::open(&training).map_err(|e| Error::io(&training, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&training, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: Map<String, Value> = serde_json::from_str(&line).map_err(|e| {
                    Error::Integrity(format!("{} line {}: {e}", training.display(), n + 1))
                })?;
                rows.push(StoredRow::from_record(&raw).map_err(|e| {
                    Error::Integrity(format!("{} line {}: {e}", training.display(), n + 1))
                })?);
            }
        }
        let state_path = dir.join(STATE_FILE);
        let current_model_version = if state_path.exists() {
            let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
            serde_json::from_str::<StoreState>(&text)
                .map_err(|e| Error::Integrity(format!("{}: {e}", state_path.display())))?
                .current_model_version
        } else {
            0
        };
        Ok(TrainingStore {
            dir: Some(dir.to_owned()),
            rows,
            current_model_version,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn model_path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(MODEL_FILE))
    }

    pub fn rows(&self) -> &[StoredRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labeled(&self) -> Vec<LabeledEvent> {
        self.rows.iter().map(|r| r.labeled.clone()).collect()
    }

    pub fn classes(&self) -> BTreeSet<String> {
        self.rows
            .iter()
            .map(|r| r.labeled.label.class_id.clone())
            .collect()
    }

    pub fn current_model_version(&self) -> u64 {
        self.current_model_version
    }

    fn persist_rows(&self, new_rows: &[StoredRow]) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join(TRAINING_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut buf = Vec::new();
        for row in new_rows {
            serde_json::to_writer(&mut buf, row)?;
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(|e| Error::io(&path, e))?;
        file.sync_data().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn persist_state(&self) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join(STATE_FILE);
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let state = StoreState {
            current_model_version: self.current_model_version,
        };
        std::fs::write(&tmp, serde_json::to_vec(&state)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Appends labeled events with the given provenance.
    pub fn append(&mut self, labeled: Vec<LabeledEvent>, source: Source) -> Result<usize> {
        self.append_sourced(labeled.into_iter().map(|le| (le, source)).collect())
    }

    fn append_sourced(&mut self, labeled: Vec<(LabeledEvent, Source)>) -> Result<usize> {
        for (le, _) in &labeled {
            le.event.check()?;
            le.label.check()?;
        }
        let now = Utc::now();
        let new_rows: Vec<StoredRow> = labeled
            .into_iter()
            .map(|(labeled, source)| StoredRow {
                labeled,
                source,
                added_at: now,
            })
            .collect();
        self.persist_rows(&new_rows)?;
        let n = new_rows.len();
        self.rows.extend(new_rows);
        Ok(n)
    }

    /// Appends each correction as `(event, corrected)` with provenance
    /// `correction`, or `new_class` when the store has not seen the corrected
    /// class. Repeated content within one submission is appended once.
    pub fn add_corrections(&mut self, corrections: &[Correction]) -> Result<CorrectionReport> {
        for c in corrections {
            c.event.check()?;
            c.corrected.check()?;
        }
        let known_classes = self.classes();
        let mut seen: HashSet<ContentKey> =
            self.rows.iter().map(|r| content_key(&r.labeled)).collect();
        let mut in_submission: HashSet<ContentKey> = HashSet::new();
        let mut report = CorrectionReport::default();
        let mut to_add = Vec::new();
        let mut new_classes = BTreeSet::new();
        for (i, c) in corrections.iter().enumerate() {
            let le = LabeledEvent::new(c.event.clone(), c.corrected.clone());
            let key = content_key(&le);
            if !in_submission.insert(key.clone()) {
                report.duplicates.push(i);
                continue;
            }
            if !seen.insert(key) {
                report.duplicates.push(i);
            }
            let source = if known_classes.contains(&c.corrected.class_id) {
                Source::Correction
            } else {
                new_classes.insert(c.corrected.class_id.clone());
                Source::NewClass
            };
            to_add.push((le, source));
        }
        report.added = self.append_sourced(to_add)?;
        report.new_classes = new_classes.into_iter().collect();
        Ok(report)
    }

    fn record_model_version(&mut self, version: u64) -> Result<()> {
        let previous = self.current_model_version;
        self.current_model_version = version;
        if let Err(e) = self.persist_state() {
            self.current_model_version = previous;
            return Err(e);
        }
        Ok(())
    }
}

/// The model currently answering requests. Readers take a snapshot and use
/// it for a whole request, so a swap is never observed halfway.
#[derive(Debug, Default)]
pub struct ServingModel {
    current: RwLock<Option<Arc<Model>>>,
}

/// A batch of results all produced by one model version.
#[derive(Debug)]
pub struct VersionedBatch {
    pub model_version: u64,
    pub results: Vec<Result<Classification>>,
}

impl ServingModel {
    pub fn new(model: Option<Model>) -> Self {
        ServingModel {
            current: RwLock::new(model.map(Arc::new)),
        }
    }

    pub fn snapshot(&self) -> Option<Arc<Model>> {
        self.current.read().expect("serving lock poisoned").clone()
    }

    pub fn version(&self) -> Option<u64> {
        self.snapshot().map(|m| m.version())
    }

    /// Replaces the serving model, returning the previous one.
    pub fn swap(&self, model: Arc<Model>) -> Option<Arc<Model>> {
        self.current
            .write()
            .expect("serving lock poisoned")
            .replace(model)
    }

    pub fn classify_batch(&self, events: &[Event]) -> Result<VersionedBatch> {
        self.classify_batch_with(Execution::default(), events)
    }

    pub fn classify_batch_with(&self, exec: Execution, events: &[Event]) -> Result<VersionedBatch> {
        let model = self.snapshot().ok_or(Error::NoModel)?;
        Ok(VersionedBatch {
            model_version: model.version(),
            results: model.classify_batch_with(exec, events),
        })
    }
}

/// Fits a new model on the whole store, persists it, and swaps it in.
///
/// On failure nothing changes: the store keeps its recorded version and the
/// serving model stays in place.
pub fn retrain(
    store: &mut TrainingStore,
    config: &EngineConfig,
    serving: &ServingModel,
) -> Result<Arc<Model>> {
    let previous = store
        .current_model_version()
        .max(serving.version().unwrap_or(0));
    let version = previous + 1;
    let mut training = store.labeled();
    if config.downsample.apply_on_retrain {
        training = downsample(&training, config)?.kept;
    }
    let model = Model::fit_versioned(&training, config, version)?;
    if let Some(path) = store.model_path() {
        artifact::save_model(&model, &path)?;
    }
    store.record_model_version(version)?;
    let model = Arc::new(model);
    serving.swap(model.clone());
    Ok(model)
}
