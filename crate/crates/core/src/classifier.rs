//! Distance-weighted KNN over the custom distance.
//!
//! Search is exhaustive. The k nearest rows are ordered by
//! `(distance, row_id)`. Each neighbor votes `1/d` for its class unless some
//! neighbor sits at (numerically) zero distance, in which case only those
//! exact matches vote, one vote each. Confidence is one minus the distance to
//! the nearest neighbor of the predicted class, over the maximum distance.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};

use crate::config::EngineConfig;
use crate::distance::{custom_unchecked, max_distance, EventFeatures};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::text::{augment_with_trace, normalize_message, TokenList, TraceExtractionRules};
use crate::types::{Classification, Event, FeatureWeights, Label, LabeledEvent, Neighbor, Thresholds};
use crate::vectorizer::VectorizerModel;

/// Distances below this count as exact matches.
pub const ZERO_DISTANCE: f64 = 1e-12;

/// The text a message vector is built from: the error message, augmented
/// with selected trace lines when rules are configured and a trace exists.
pub fn message_text(event: &Event, rules: Option<&TraceExtractionRules>) -> String {
    match (rules, event.trace_excerpt.as_deref()) {
        (Some(rules), Some(trace)) => augment_with_trace(&event.error_message, trace, rules),
        _ => event.error_message.clone(),
    }
}

pub fn event_tokens(event: &Event, rules: Option<&TraceExtractionRules>) -> TokenList {
    normalize_message(&message_text(event, rules))
}

pub(crate) fn categorical_of(event: &Event) -> [String; 4] {
    event.categorical().map(str::to_owned)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub row_id: u64,
    pub features: EventFeatures,
    pub label: Label,
}

/// A fitted classifier. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    vectorizer: VectorizerModel,
    rows: Vec<TrainingRow>,
    weights: FeatureWeights,
    k: usize,
    thresholds: Thresholds,
    trace_rules: Option<TraceExtractionRules>,
    version: u64,
    created_at: DateTime<Utc>,
}

impl Model {
    /// Fits version 1 of a model.
    pub fn fit(training: &[LabeledEvent], config: &EngineConfig) -> Result<Model> {
        Model::fit_versioned(training, config, 1)
    }

    /// Row ids are positions in `training`.
    pub fn fit_versioned(
        training: &[LabeledEvent],
        config: &EngineConfig,
        version: u64,
    ) -> Result<Model> {
        config.validate()?;
        if training.is_empty() {
            return Err(Error::Fit("training set is empty".into()));
        }
        let classes: BTreeSet<&str> = training.iter().map(|t| t.label.class_id.as_str()).collect();
        if classes.len() < 2 {
            return Err(Error::Fit(format!(
                "training set needs at least 2 classes, found {}",
                classes.len()
            )));
        }
        if config.k > training.len() {
            return Err(Error::Fit(format!(
                "k = {} exceeds the {} training rows",
                config.k,
                training.len()
            )));
        }
        for (i, t) in training.iter().enumerate() {
            t.event
                .check()
                .and_then(|_| t.label.check())
                .map_err(|e| Error::Fit(format!("training row {i}: {e}")))?;
        }
        let rules = config.trace_rules.as_ref();
        let tokens: Vec<TokenList> = training.iter().map(|t| event_tokens(&t.event, rules)).collect();
        let vectorizer = VectorizerModel::fit(&tokens, config.min_term_frequency)?;
        let rows = training
            .iter()
            .zip(&tokens)
            .enumerate()
            .map(|(i, (t, toks))| TrainingRow {
                row_id: i as u64,
                features: EventFeatures::new(categorical_of(&t.event), vectorizer.transform(toks)),
                label: t.label.clone(),
            })
            .collect();
        Ok(Model {
            vectorizer,
            rows,
            weights: config.weights.clone(),
            k: config.k,
            thresholds: config.thresholds,
            trace_rules: config.trace_rules.clone(),
            version,
            created_at: Utc::now(),
        })
    }

    /// Reassembles a model from stored parts, checking its invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        vectorizer: VectorizerModel,
        rows: Vec<TrainingRow>,
        weights: FeatureWeights,
        k: usize,
        thresholds: Thresholds,
        trace_rules: Option<TraceExtractionRules>,
        version: u64,
        created_at: DateTime<Utc>,
    ) -> Result<Model> {
        if rows.is_empty() {
            return Err(Error::Integrity("model has no training rows".into()));
        }
        if k == 0 || k > rows.len() {
            return Err(Error::Integrity(format!("k = {k} invalid for {} rows", rows.len())));
        }
        let dim = vectorizer.vocabulary().len();
        if rows.iter().any(|r| r.features.message.dimension() != dim) {
            return Err(Error::Integrity("row vector dimension differs from vocabulary".into()));
        }
        let ids: BTreeSet<u64> = rows.iter().map(|r| r.row_id).collect();
        if ids.len() != rows.len() {
            return Err(Error::Integrity("duplicate training row ids".into()));
        }
        Ok(Model {
            vectorizer,
            rows,
            weights,
            k,
            thresholds,
            trace_rules,
            version,
            created_at,
        })
    }

    pub fn vectorizer(&self) -> &VectorizerModel {
        &self.vectorizer
    }

    pub fn rows(&self) -> &[TrainingRow] {
        &self.rows
    }

    pub fn weights(&self) -> &FeatureWeights {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn trace_rules(&self) -> Option<&TraceExtractionRules> {
        self.trace_rules.as_ref()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn training_size(&self) -> usize {
        self.rows.len()
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.label.class_id.clone()).or_default() += 1;
        }
        counts
    }

    pub fn features(&self, event: &Event) -> Result<EventFeatures> {
        event.check()?;
        let tokens = event_tokens(event, self.trace_rules.as_ref());
        Ok(EventFeatures::new(
            categorical_of(event),
            self.vectorizer.transform(&tokens),
        ))
    }

    /// Indices into `rows` of the k nearest rows with their distances.
    fn nearest(&self, features: &EventFeatures) -> Vec<(f64, usize)> {
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (custom_unchecked(features, &r.features, &self.weights), i))
            .collect();
        let rows = &self.rows;
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then(rows[a.1].row_id.cmp(&rows[b.1].row_id))
        };
        if self.k < scored.len() {
            scored.select_nth_unstable_by(self.k - 1, order);
            scored.truncate(self.k);
        }
        scored.sort_by(order);
        scored
    }

    pub fn classify(&self, event: &Event) -> Result<Classification> {
        let features = self.features(event)?;
        let neighbors: Vec<Neighbor> = self
            .nearest(&features)
            .into_iter()
            .map(|(d, i)| Neighbor {
                row_id: self.rows[i].row_id,
                label: self.rows[i].label.clone(),
                distance: d,
            })
            .collect();
        let decision = decide(&neighbors, max_distance(&self.weights));
        Ok(Classification {
            event_id: event.event_id.clone(),
            uncertain: self
                .thresholds
                .is_uncertain(decision.probability, decision.confidence),
            predicted: decision.predicted,
            probability: decision.probability,
            confidence: decision.confidence,
            neighbors,
        })
    }

    pub fn classify_batch(&self, events: &[Event]) -> Vec<Result<Classification>> {
        self.classify_batch_with(Execution::default(), events)
    }

    /// Output order matches `events`; a bad event yields an error entry
    /// without affecting the rest of the batch.
    pub fn classify_batch_with(
        &self,
        exec: Execution,
        events: &[Event],
    ) -> Vec<Result<Classification>> {
        par::map(exec, events, |e| self.classify(e))
    }
}

pub(crate) struct Decision {
    pub predicted: Label,
    pub probability: f64,
    pub confidence: f64,
}

/// Vote and confidence over neighbors sorted ascending by distance.
pub(crate) fn decide(neighbors: &[Neighbor], max_distance: f64) -> Decision {
    assert!(!neighbors.is_empty(), "k >= 1 guarantees at least one neighbor");
    let exact = neighbors[0].distance < ZERO_DISTANCE;
    let mut votes: BTreeMap<&str, f64> = BTreeMap::new();
    for n in neighbors {
        let weight = if exact {
            if n.distance < ZERO_DISTANCE {
                1.0
            } else {
                continue;
            }
        } else {
            1.0 / n.distance
        };
        *votes.entry(n.label.class_id.as_str()).or_default() += weight;
    }
    let total: f64 = votes.values().sum();
    let mut best: Option<(&str, f64)> = None;
    for (&class, &v) in &votes {
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((class, v));
        }
    }
    let (class, vote) = best.expect("at least one vote");
    let nearest_in_class = neighbors
        .iter()
        .find(|n| n.label.class_id == class)
        .expect("the winning class has a neighbor");
    let confidence = (1.0 - nearest_in_class.distance / max_distance).clamp(0.0, 1.0);
    Decision {
        predicted: nearest_in_class.label.clone(),
        probability: vote / total,
        confidence,
    }
}
