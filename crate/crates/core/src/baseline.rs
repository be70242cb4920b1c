//! Euclidean-distance KNN baseline: one-hot categoricals concatenated with
//! the message vector. Used only for evaluation.

use std::collections::{BTreeMap, BTreeSet};

use crate::classifier::{decide, event_tokens};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::text::TraceExtractionRules;
use crate::types::{Classification, Event, LabeledEvent, Neighbor, Thresholds};
use crate::vectorizer::VectorizerModel;

/// Sparse feature vector, indices strictly increasing.
type Sparse = Vec<(u32, f64)>;

pub struct EuclideanBaseline {
    vectorizer: VectorizerModel,
    /// Per categorical attribute: value -> column offset within the block.
    categories: [BTreeMap<String, u32>; 4],
    block_starts: [u32; 4],
    message_start: u32,
    rows: Vec<(u64, Sparse, crate::types::Label)>,
    k: usize,
    thresholds: Thresholds,
    trace_rules: Option<TraceExtractionRules>,
}

impl EuclideanBaseline {
    pub fn fit(training: &[LabeledEvent], config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        if training.is_empty() {
            return Err(Error::Fit("training set is empty".into()));
        }
        let classes: BTreeSet<&str> = training.iter().map(|t| t.label.class_id.as_str()).collect();
        if classes.len() < 2 {
            return Err(Error::Fit("training set needs at least 2 classes".into()));
        }
        if config.k > training.len() {
            return Err(Error::Fit(format!("k = {} exceeds training size", config.k)));
        }
        let rules = config.trace_rules.as_ref();
        let tokens: Vec<_> = training.iter().map(|t| event_tokens(&t.event, rules)).collect();
        let vectorizer = VectorizerModel::fit(&tokens, config.min_term_frequency)?;

        let mut categories: [BTreeMap<String, u32>; 4] = Default::default();
        for t in training {
            for (slot, value) in categories.iter_mut().zip(t.event.categorical()) {
                slot.entry(value.to_owned()).or_insert(0);
            }
        }
        let mut block_starts = [0u32; 4];
        let mut offset = 0u32;
        for (slot, start) in categories.iter_mut().zip(block_starts.iter_mut()) {
            *start = offset;
            for (i, col) in slot.values_mut().enumerate() {
                *col = i as u32;
            }
            offset += slot.len() as u32;
        }
        let mut baseline = EuclideanBaseline {
            vectorizer,
            categories,
            block_starts,
            message_start: offset,
            rows: Vec::with_capacity(training.len()),
            k: config.k,
            thresholds: config.thresholds,
            trace_rules: config.trace_rules.clone(),
        };
        baseline.rows = training
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u64, baseline.encode(&t.event), t.label.clone()))
            .collect();
        Ok(baseline)
    }

    /// One-hot blocks followed by the message vector. Unseen categorical
    /// values encode as an all-zero block.
    fn encode(&self, event: &Event) -> Sparse {
        let mut out = Sparse::new();
        for ((slot, start), value) in self
            .categories
            .iter()
            .zip(self.block_starts)
            .zip(event.categorical())
        {
            if let Some(col) = slot.get(value) {
                out.push((start + col, 1.0));
            }
        }
        let msg = self
            .vectorizer
            .transform(&event_tokens(event, self.trace_rules.as_ref()));
        out.extend(msg.iter().map(|(i, v)| (self.message_start + i as u32, v)));
        out
    }

    /// Two one-hot blocks differ by at most sqrt(2) each, two nonnegative
    /// unit message vectors by at most sqrt(2).
    pub fn max_distance(&self) -> f64 {
        10f64.sqrt()
    }

    pub fn classify(&self, event: &Event) -> Result<Classification> {
        event.check()?;
        let query = self.encode(event);
        let mut scored: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (_, v, _))| (euclidean(&query, v), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(self.rows[a.1].0.cmp(&self.rows[b.1].0)));
        scored.truncate(self.k);
        let neighbors: Vec<Neighbor> = scored
            .into_iter()
            .map(|(d, i)| Neighbor {
                row_id: self.rows[i].0,
                label: self.rows[i].2.clone(),
                distance: d,
            })
            .collect();
        let decision = decide(&neighbors, self.max_distance());
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
}

fn euclidean(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() || j < b.len() {
        let d = match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                i += 1;
                j += 1;
                va - vb
            }
            (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                i += 1;
                va
            }
            (Some(&(_, va)), None) => {
                i += 1;
                va
            }
            (_, Some(&(_, vb))) => {
                j += 1;
                vb
            }
            (None, None) => unreachable!(),
        };
        sum += d * d;
    }
    sum.sqrt()
}

/// Fits the baseline on `training` with default settings and the given `k`,
/// then classifies `event`.
pub fn classify_baseline_ed(training: &[LabeledEvent], event: &Event, k: usize) -> Result<Classification> {
    let config = EngineConfig {
        k,
        ..EngineConfig::default()
    };
    EuclideanBaseline::fit(training, &config)?.classify(event)
}
