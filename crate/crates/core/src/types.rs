//! Domain types shared by every module, and their canonical JSON shape.
//!
//! Events and labeled events are flat JSON objects. Deserialization goes
//! through [`validate_event`] so a bad record is rejected with the name of
//! the offending field.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One failed replay event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Map<String, Value>")]
pub struct Event {
    pub event_id: String,
    pub error_code: String,
    pub error_message: String,
    pub sql_type: String,
    pub sql_subtype: String,
    pub request_type: String,
    pub trace_excerpt: Option<String>,
}

impl Event {
    /// The four categorical attributes in distance order.
    pub fn categorical(&self) -> [&str; 4] {
        [
            &self.error_code,
            &self.sql_type,
            &self.sql_subtype,
            &self.request_type,
        ]
    }

    /// Checks the invariants a directly constructed event might violate.
    pub fn check(&self) -> Result<()> {
        for (name, value) in [
            ("event_id", &self.event_id),
            ("error_code", &self.error_code),
            ("sql_type", &self.sql_type),
            ("sql_subtype", &self.sql_subtype),
            ("request_type", &self.request_type),
        ] {
            if value.is_empty() {
                return Err(Error::validation(name, "must be a non-empty string"));
            }
        }
        Ok(())
    }

    /// Equality on everything except `event_id`.
    pub fn same_content(&self, other: &Event) -> bool {
        self.error_code == other.error_code
            && self.error_message == other.error_message
            && self.sql_type == other.sql_type
            && self.sql_subtype == other.sql_subtype
            && self.request_type == other.request_type
            && self.trace_excerpt == other.trace_excerpt
    }
}

impl TryFrom<Map<String, Value>> for Event {
    type Error = Error;

    fn try_from(raw: Map<String, Value>) -> Result<Self> {
        validate_event(&raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    TruePositive,
    FalsePositive,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::TruePositive => "true_positive",
            Kind::FalsePositive => "false_positive",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_positive" => Ok(Kind::TruePositive),
            "false_positive" => Ok(Kind::FalsePositive),
            other => Err(Error::validation(
                "kind",
                format!("expected `true_positive` or `false_positive`, got `{other}`"),
            )),
        }
    }
}

/// A root-cause label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Map<String, Value>")]
pub struct Label {
    pub class_id: String,
    pub kind: Kind,
    pub bug_id: Option<String>,
}

impl Label {
    pub fn new(class_id: impl Into<String>, kind: Kind) -> Self {
        Label {
            class_id: class_id.into(),
            kind,
            bug_id: None,
        }
    }

    pub fn with_bug(mut self, bug_id: impl Into<String>) -> Self {
        self.bug_id = Some(bug_id.into());
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.class_id.is_empty() {
            return Err(Error::validation("class_id", "must be a non-empty string"));
        }
        Ok(())
    }
}

impl TryFrom<Map<String, Value>> for Label {
    type Error = Error;

    fn try_from(raw: Map<String, Value>) -> Result<Self> {
        validate_label(&raw)
    }
}

/// An event with its root-cause label. Serialized flat: event fields
/// followed by `class_id`, `kind`, `bug_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Deserialize)]
#[serde(try_from = "Map<String, Value>")]
pub struct LabeledEvent {
    pub event: Event,
    pub label: Label,
}

impl LabeledEvent {
    pub fn new(event: Event, label: Label) -> Self {
        LabeledEvent { event, label }
    }
}

impl Serialize for LabeledEvent {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Flat<'a> {
            #[serde(flatten)]
            event: &'a Event,
            #[serde(flatten)]
            label: &'a Label,
        }
        Flat {
            event: &self.event,
            label: &self.label,
        }
        .serialize(serializer)
    }
}

impl TryFrom<Map<String, Value>> for LabeledEvent {
    type Error = Error;

    fn try_from(raw: Map<String, Value>) -> Result<Self> {
        Ok(LabeledEvent {
            event: validate_event(&raw)?,
            label: validate_label(&raw)?,
        })
    }
}

fn required_str<'a>(raw: &'a Map<String, Value>, field: &str) -> Result<&'a str> {
    match raw.get(field) {
        None | Some(Value::Null) => Err(Error::validation(field, "missing required field")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(Error::validation(field, "expected a string")),
    }
}

fn required_non_empty<'a>(raw: &'a Map<String, Value>, field: &str) -> Result<&'a str> {
    let s = required_str(raw, field)?;
    if s.is_empty() {
        return Err(Error::validation(field, "must be a non-empty string"));
    }
    Ok(s)
}

fn optional_str(raw: &Map<String, Value>, field: &str) -> Result<Option<String>> {
    match raw.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::validation(field, "expected a string or null")),
    }
}

/// Validates a raw key-value record into an [`Event`].
///
/// `error_message` must be present but may be empty; `trace_excerpt` may be
/// absent or null. Unknown keys are ignored.
pub fn validate_event(raw: &Map<String, Value>) -> Result<Event> {
    Ok(Event {
        event_id: required_non_empty(raw, "event_id")?.to_owned(),
        error_code: required_non_empty(raw, "error_code")?.to_owned(),
        error_message: required_str(raw, "error_message")?.to_owned(),
        sql_type: required_non_empty(raw, "sql_type")?.to_owned(),
        sql_subtype: required_non_empty(raw, "sql_subtype")?.to_owned(),
        request_type: required_non_empty(raw, "request_type")?.to_owned(),
        trace_excerpt: optional_str(raw, "trace_excerpt")?,
    })
}

pub fn validate_label(raw: &Map<String, Value>) -> Result<Label> {
    let class_id = required_non_empty(raw, "class_id")?.to_owned();
    let kind = required_str(raw, "kind")?.parse()?;
    Ok(Label {
        class_id,
        kind,
        bug_id: optional_str(raw, "bug_id")?,
    })
}

/// Per-attribute weights of the custom distance.
///
/// The distance only sees the weights through [`FeatureWeights::canonical`]:
/// ratios to the smallest positive weight, rounded to a 2^-24 grid. That makes
/// a uniform rescaling of all weights produce bit-identical distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct FeatureWeights {
    raw: [f64; 5],
    canonical: [f64; 5],
    canonical_sum: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawWeights {
    error_code: f64,
    error_message: f64,
    sql_type: f64,
    sql_subtype: f64,
    request_type: f64,
}

impl TryFrom<RawWeights> for FeatureWeights {
    type Error = Error;

    fn try_from(w: RawWeights) -> Result<Self> {
        FeatureWeights::new(
            w.error_code,
            w.error_message,
            w.sql_type,
            w.sql_subtype,
            w.request_type,
        )
    }
}

impl From<FeatureWeights> for RawWeights {
    fn from(w: FeatureWeights) -> Self {
        let [error_code, error_message, sql_type, sql_subtype, request_type] = w.raw;
        RawWeights {
            error_code,
            error_message,
            sql_type,
            sql_subtype,
            request_type,
        }
    }
}

const WEIGHT_GRID: f64 = (1u64 << 24) as f64;

impl FeatureWeights {
    pub fn new(
        error_code: f64,
        error_message: f64,
        sql_type: f64,
        sql_subtype: f64,
        request_type: f64,
    ) -> Result<Self> {
        let raw = [error_code, error_message, sql_type, sql_subtype, request_type];
        const NAMES: [&str; 5] = [
            "weights.error_code",
            "weights.error_message",
            "weights.sql_type",
            "weights.sql_subtype",
            "weights.request_type",
        ];
        for (w, name) in raw.iter().zip(NAMES) {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::validation(name, "weight must be finite and >= 0"));
            }
        }
        let min_positive = raw
            .iter()
            .copied()
            .filter(|w| *w > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !min_positive.is_finite() {
            return Err(Error::validation("weights", "at least one weight must be positive"));
        }
        let canonical = raw.map(|w| {
            let ratio = w / min_positive;
            let scaled = ratio * WEIGHT_GRID;
            if scaled.is_finite() && ratio < (1u64 << 28) as f64 {
                scaled.round() / WEIGHT_GRID
            } else {
                ratio
            }
        });
        let canonical_sum = canonical.iter().sum();
        Ok(FeatureWeights {
            raw,
            canonical,
            canonical_sum,
        })
    }

    pub fn uniform() -> Self {
        FeatureWeights::new(1.0, 1.0, 1.0, 1.0, 1.0).expect("uniform weights are valid")
    }

    /// Weights as configured, ordered error_code, error_message, sql_type,
    /// sql_subtype, request_type.
    pub fn raw(&self) -> [f64; 5] {
        self.raw
    }

    pub fn canonical(&self) -> &[f64; 5] {
        &self.canonical
    }

    pub fn canonical_sum(&self) -> f64 {
        self.canonical_sum
    }

    pub fn error_code(&self) -> f64 {
        self.raw[0]
    }

    pub fn error_message(&self) -> f64 {
        self.raw[1]
    }

    pub fn sql_type(&self) -> f64 {
        self.raw[2]
    }

    pub fn sql_subtype(&self) -> f64 {
        self.raw[3]
    }

    pub fn request_type(&self) -> f64 {
        self.raw[4]
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let [a, b, c, d, e] = self.raw.map(|w| w * factor);
        FeatureWeights::new(a, b, c, d, e)
    }
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights::new(2.0, 3.0, 1.0, 1.0, 1.0).expect("default weights are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct Thresholds {
    min_probability: f64,
    min_confidence: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawThresholds {
    #[serde(default = "default_min_probability")]
    min_probability: f64,
    #[serde(default = "default_min_confidence")]
    min_confidence: f64,
}

fn default_min_probability() -> f64 {
    0.9
}

fn default_min_confidence() -> f64 {
    0.7
}

impl TryFrom<RawThresholds> for Thresholds {
    type Error = Error;

    fn try_from(t: RawThresholds) -> Result<Self> {
        Thresholds::new(t.min_probability, t.min_confidence)
    }
}

impl From<Thresholds> for RawThresholds {
    fn from(t: Thresholds) -> Self {
        RawThresholds {
            min_probability: t.min_probability,
            min_confidence: t.min_confidence,
        }
    }
}

impl Thresholds {
    pub fn new(min_probability: f64, min_confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&min_probability) {
            return Err(Error::validation(
                "thresholds.min_probability",
                "must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&min_confidence) {
            return Err(Error::validation(
                "thresholds.min_confidence",
                "must lie in [0, 1]",
            ));
        }
        Ok(Thresholds {
            min_probability,
            min_confidence,
        })
    }

    pub fn min_probability(&self) -> f64 {
        self.min_probability
    }

    pub fn min_confidence(&self) -> f64 {
        self.min_confidence
    }

    pub fn is_uncertain(&self, probability: f64, confidence: f64) -> bool {
        probability < self.min_probability || confidence < self.min_confidence
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_probability: default_min_probability(),
            min_confidence: default_min_confidence(),
        }
    }
}

/// One of the k nearest training rows behind a classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub row_id: u64,
    pub label: Label,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub event_id: String,
    pub predicted: Label,
    pub probability: f64,
    pub confidence: f64,
    pub uncertain: bool,
    /// Ascending by distance, at most k entries.
    pub neighbors: Vec<Neighbor>,
}
