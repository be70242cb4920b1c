//! Weighted custom distance between events.
//!
//! Each categorical attribute contributes a 0/1 mismatch, the error message
//! contributes its cosine distance, and the contributions are averaged with
//! the feature weights. The result always lies in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::FeatureWeights;
use crate::vectorizer::MessageVector;

/// Categorical attribute names in [`EventFeatures::categorical`] order.
pub const CATEGORICAL_ATTRIBUTES: [&str; 4] =
    ["error_code", "sql_type", "sql_subtype", "request_type"];

/// An event as the distance sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFeatures {
    pub categorical: [String; 4],
    pub message: MessageVector,
}

impl EventFeatures {
    pub fn new(categorical: [String; 4], message: MessageVector) -> Self {
        EventFeatures {
            categorical,
            message,
        }
    }
}

/// `1 - u.v / (|u||v|)`; 0 when both vectors are zero, 1 when exactly one is.
pub fn cosine_distance(u: &MessageVector, v: &MessageVector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::DimensionMismatch {
            left: u.dimension(),
            right: v.dimension(),
        });
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &MessageVector, v: &MessageVector) -> f64 {
    match (u.is_zero(), v.is_zero()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    if u.indices() == v.indices() && u.values() == v.values() {
        return 0.0;
    }
    let (ui, uv) = (u.indices(), u.values());
    let (vi, vv) = (v.indices(), v.values());
    let (mut a, mut b) = (0, 0);
    let mut dot = 0.0;
    while a < ui.len() && b < vi.len() {
        match ui[a].cmp(&vi[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => {
                dot += uv[a] * vv[b];
                a += 1;
                b += 1;
            }
        }
    }
    (1.0 - dot / (u.norm() * v.norm())).clamp(0.0, 1.0)
}

/// Weighted mean of per-attribute distances, summed in the order
/// error_code, error_message, sql_type, sql_subtype, request_type.
pub fn custom_distance(x: &EventFeatures, y: &EventFeatures, w: &FeatureWeights) -> Result<f64> {
    if x.message.dimension() != y.message.dimension() {
        return Err(Error::DimensionMismatch {
            left: x.message.dimension(),
            right: y.message.dimension(),
        });
    }
    Ok(custom_unchecked(x, y, w))
}

#[inline]
fn mismatch(a: &str, b: &str) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

pub(crate) fn custom_unchecked(x: &EventFeatures, y: &EventFeatures, w: &FeatureWeights) -> f64 {
    let q = w.canonical();
    let message = if q[1] == 0.0 {
        0.0
    } else {
        cosine_unchecked(&x.message, &y.message)
    };
    let parts = [
        mismatch(&x.categorical[0], &y.categorical[0]),
        message,
        mismatch(&x.categorical[1], &y.categorical[1]),
        mismatch(&x.categorical[2], &y.categorical[2]),
        mismatch(&x.categorical[3], &y.categorical[3]),
    ];
    let mut total = 0.0;
    for (wi, di) in q.iter().zip(parts) {
        total += wi * di;
    }
    (total / w.canonical_sum()).clamp(0.0, 1.0)
}

/// Largest value [`custom_distance`] can take: 1 under the weighted-mean
/// formulation, whatever the weights.
pub fn max_distance(_w: &FeatureWeights) -> f64 {
    1.0
}
