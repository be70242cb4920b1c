//! Per-class near-duplicate reduction by greedy leader clustering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::{categorical_of, event_tokens};
use crate::config::EngineConfig;
use crate::distance::{custom_unchecked, EventFeatures};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::LabeledEvent;
use crate::vectorizer::VectorizerModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassReduction {
    pub before: usize,
    pub after: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    /// Surviving rows in their original relative order.
    pub kept: Vec<LabeledEvent>,
    /// Input positions of `kept`.
    pub kept_indices: Vec<usize>,
    pub per_class: BTreeMap<String, ClassReduction>,
}

/// Cluster assignment of each row of one class, plus the cluster count.
fn cluster_class(rows: &[&LabeledEvent], config: &EngineConfig) -> Result<(Vec<usize>, usize)> {
    let rules = config.trace_rules.as_ref();
    let tokens: Vec<_> = rows.iter().map(|r| event_tokens(&r.event, rules)).collect();
    let vectorizer = VectorizerModel::fit(&tokens, config.min_term_frequency)?;
    let features: Vec<EventFeatures> = rows
        .iter()
        .zip(&tokens)
        .map(|(r, t)| EventFeatures::new(categorical_of(&r.event), vectorizer.transform(t)))
        .collect();
    let threshold = config.downsample.group_distance_threshold;
    let mut leaders: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(rows.len());
    for (i, f) in features.iter().enumerate() {
        let found = leaders
            .iter()
            .position(|&l| custom_unchecked(f, &features[l], &config.weights) <= threshold);
        match found {
            Some(cluster) => assignment.push(cluster),
            None => {
                assignment.push(leaders.len());
                leaders.push(i);
            }
        }
    }
    Ok((assignment, leaders.len()))
}

pub fn downsample(labeled: &[LabeledEvent], config: &EngineConfig) -> Result<Downsampled> {
    downsample_with(Execution::default(), labeled, config)
}

/// Keeps at most `per_group_cap` rows of every cluster, first seen first.
/// The input is never modified and the result depends only on input order
/// and config.
pub fn downsample_with(
    exec: Execution,
    labeled: &[LabeledEvent],
    config: &EngineConfig,
) -> Result<Downsampled> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::validation("labeled", "must not be empty"));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, le) in labeled.iter().enumerate() {
        le.event.check()?;
        by_class.entry(le.label.class_id.as_str()).or_default().push(i);
    }
    let classes: Vec<(&str, Vec<usize>)> = by_class.into_iter().collect();
    let cap = config.downsample.per_group_cap;
    let outcomes = par::map(exec, &classes, |(_, members)| {
        let rows: Vec<&LabeledEvent> = members.iter().map(|&i| &labeled[i]).collect();
        let (assignment, clusters) = cluster_class(&rows, config)?;
        let mut taken = vec![0usize; clusters];
        let mut keep = Vec::new();
        for (&i, &c) in members.iter().zip(&assignment) {
            if taken[c] < cap {
                taken[c] += 1;
                keep.push(i);
            }
        }
        Ok::<_, Error>((keep, clusters))
    });

    let mut kept_indices = Vec::new();
    let mut per_class = BTreeMap::new();
    for ((class, members), outcome) in classes.iter().zip(outcomes) {
        let (keep, clusters) = outcome?;
        per_class.insert(
            class.to_string(),
            ClassReduction {
                before: members.len(),
                after: keep.len(),
                clusters,
            },
        );
        kept_indices.extend(keep);
    }
    kept_indices.sort_unstable();
    Ok(Downsampled {
        kept: kept_indices.iter().map(|&i| labeled[i].clone()).collect(),
        kept_indices,
        per_class,
    })
}
