//! Model artifact: one gzip-compressed, self-describing JSON document.
//!
//! The document carries `"mira_model_schema": 1`. Floats are written in
//! shortest round-trip form, so a loaded model classifies bit-identically
//! to the one that was saved.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{Model, TrainingRow};
use crate::distance::EventFeatures;
use crate::error::{Error, Result};
use crate::text::TraceExtractionRules;
use crate::types::{FeatureWeights, Label, Thresholds};
use crate::vectorizer::{MessageVector, VectorizerModel};

pub const SCHEMA_FIELD: &str = "mira_model_schema";
pub const SCHEMA_VERSION: i64 = 1;

#[derive(Serialize, Deserialize)]
struct ArtifactDoc {
    mira_model_schema: i64,
    version: u64,
    created_at: DateTime<Utc>,
    k: usize,
    weights: FeatureWeights,
    thresholds: Thresholds,
    trace_rules: Option<TraceExtractionRules>,
    vectorizer: VectorizerModel,
    rows: Vec<RowDoc>,
}

#[derive(Serialize, Deserialize)]
struct RowDoc {
    row_id: u64,
    categorical: [String; 4],
    indices: Vec<u32>,
    values: Vec<f64>,
    label: Label,
}

/// Serializes a model into the (uncompressed) artifact JSON document.
pub fn to_json(model: &Model) -> Result<Vec<u8>> {
    let doc = ArtifactDoc {
        mira_model_schema: SCHEMA_VERSION,
        version: model.version(),
        created_at: model.created_at(),
        k: model.k(),
        weights: model.weights().clone(),
        thresholds: model.thresholds(),
        trace_rules: model.trace_rules().cloned(),
        vectorizer: model.vectorizer().clone(),
        rows: model
            .rows()
            .iter()
            .map(|r| RowDoc {
                row_id: r.row_id,
                categorical: r.features.categorical.clone(),
                indices: r.features.message.indices().to_vec(),
                values: r.features.message.values().to_vec(),
                label: r.label.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_vec(&doc)?)
}

pub fn from_json(bytes: &[u8]) -> Result<Model> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| Error::Integrity(format!("artifact is not valid JSON: {e}")))?;
    match value.get(SCHEMA_FIELD).and_then(Value::as_i64) {
        Some(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(Error::SchemaVersion {
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => return Err(Error::Integrity(format!("missing `{SCHEMA_FIELD}` field"))),
    }
    let doc: ArtifactDoc =
        serde_json::from_value(value).map_err(|e| Error::Integrity(e.to_string()))?;
    let dim = doc.vectorizer.vocabulary().len();
    let rows = doc
        .rows
        .into_iter()
        .map(|r| {
            Ok(TrainingRow {
                row_id: r.row_id,
                features: EventFeatures::new(
                    r.categorical,
                    MessageVector::from_sparse(dim, r.indices, r.values)?,
                ),
                label: r.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_parts(
        doc.vectorizer,
        rows,
        doc.weights,
        doc.k,
        doc.thresholds,
        doc.trace_rules,
        doc.version,
        doc.created_at,
    )
}

/// Writes the artifact through a temporary file and renames it into place.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let json = to_json(model)?;
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut encoder = GzEncoder::new(BufWriter::new(file), Compression::default());
    encoder.write_all(&json).map_err(|e| Error::io(&tmp, e))?;
    let writer = encoder.finish().map_err(|e| Error::io(&tmp, e))?;
    let file = writer.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut compressed = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut compressed))
        .map_err(|e| Error::io(path, e))?;
    let mut json = Vec::new();
    GzDecoder::new(compressed.as_slice())
        .read_to_end(&mut json)
        .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    from_json(&json)
}
