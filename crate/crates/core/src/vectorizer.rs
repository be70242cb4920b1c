//! TF-IDF vectorization of normalized error messages.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, raw in-document term counts,
//! L2-normalized output. Columns are the vocabulary in lexicographic order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenList;

/// Sparse nonnegative vector; indices strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVector", into = "RawVector")]
pub struct MessageVector {
    dimension: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
    norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawVector {
    dimension: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl TryFrom<RawVector> for MessageVector {
    type Error = Error;

    fn try_from(raw: RawVector) -> Result<Self> {
        MessageVector::from_sparse(raw.dimension, raw.indices, raw.values)
    }
}

impl From<MessageVector> for RawVector {
    fn from(v: MessageVector) -> Self {
        RawVector {
            dimension: v.dimension,
            indices: v.indices,
            values: v.values,
        }
    }
}

impl MessageVector {
    pub fn zeros(dimension: usize) -> Self {
        MessageVector {
            dimension,
            indices: Vec::new(),
            values: Vec::new(),
            norm: 0.0,
        }
    }

    /// Builds a vector from sorted sparse entries. Explicit zeros are dropped.
    pub fn from_sparse(dimension: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Integrity(format!(
                "sparse vector has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity("sparse indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i as usize >= dimension) {
            return Err(Error::Integrity("sparse index out of range".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Integrity("vector entries must be finite and >= 0".into()));
        }
        let (indices, values): (Vec<u32>, Vec<f64>) = indices
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v != 0.0)
            .unzip();
        let norm = l2(&values);
        Ok(MessageVector {
            dimension,
            indices,
            values,
            norm,
        })
    }

    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        MessageVector::from_sparse(dense.len(), indices, values)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn get(&self, column: usize) -> f64 {
        match self.indices.binary_search(&(column as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The embedding extension point: anything that turns a token list into a
/// fixed-dimension nonnegative vector.
pub trait TextVectorizer {
    fn dimension(&self) -> usize;
    fn transform(&self, tokens: &TokenList) -> MessageVector;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawVectorizer {
    vocabulary: Vec<String>,
    idf: Vec<f64>,
    min_term_frequency: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawVectorizer", into = "RawVectorizer")]
pub struct VectorizerModel {
    vocabulary: Vec<String>,
    index: HashMap<String, u32>,
    idf: Vec<f64>,
    min_term_frequency: usize,
}

impl PartialEq for VectorizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary
            && self.idf == other.idf
            && self.min_term_frequency == other.min_term_frequency
    }
}

impl TryFrom<RawVectorizer> for VectorizerModel {
    type Error = Error;

    fn try_from(raw: RawVectorizer) -> Result<Self> {
        if raw.vocabulary.len() != raw.idf.len() {
            return Err(Error::Integrity("vocabulary and idf lengths differ".into()));
        }
        if raw.vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity("vocabulary must be strictly sorted".into()));
        }
        if raw.idf.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Integrity("idf values must be positive".into()));
        }
        if raw.min_term_frequency == 0 {
            return Err(Error::Integrity("min_term_frequency must be positive".into()));
        }
        Ok(VectorizerModel::from_parts(raw.vocabulary, raw.idf, raw.min_term_frequency))
    }
}

impl From<VectorizerModel> for RawVectorizer {
    fn from(m: VectorizerModel) -> Self {
        RawVectorizer {
            vocabulary: m.vocabulary,
            idf: m.idf,
            min_term_frequency: m.min_term_frequency,
        }
    }
}

impl VectorizerModel {
    fn from_parts(vocabulary: Vec<String>, idf: Vec<f64>, min_term_frequency: usize) -> Self {
        let index = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        VectorizerModel {
            vocabulary,
            index,
            idf,
            min_term_frequency,
        }
    }

    /// Keeps tokens whose document frequency reaches `min_term_frequency`.
    pub fn fit<'a, I>(corpus: I, min_term_frequency: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TokenList>,
    {
        if min_term_frequency == 0 {
            return Err(Error::Config("min_term_frequency must be positive".into()));
        }
        let mut df: BTreeMap<&'a str, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in corpus {
            n_docs += 1;
            let unique: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Fit("vectorizer corpus is empty".into()));
        }
        let n = n_docs as f64;
        let (vocabulary, idf) = df
            .into_iter()
            .filter(|(_, count)| *count >= min_term_frequency)
            .map(|(t, count)| (t.to_owned(), ((1.0 + n) / (1.0 + count as f64)).ln() + 1.0))
            .unzip();
        Ok(VectorizerModel::from_parts(vocabulary, idf, min_term_frequency))
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn min_term_frequency(&self) -> usize {
        self.min_term_frequency
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    /// Raw term counts times idf, L2-normalized. Out-of-vocabulary tokens
    /// contribute nothing.
    pub fn transform(&self, tokens: &TokenList) -> MessageVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens.iter() {
            if let Some(&col) = self.index.get(t.as_str()) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        if counts.is_empty() {
            return MessageVector::zeros(self.vocabulary.len());
        }
        let (indices, mut values): (Vec<u32>, Vec<f64>) = counts
            .into_iter()
            .map(|(col, tf)| (col, tf * self.idf[col as usize]))
            .unzip();
        let norm = l2(&values);
        for v in &mut values {
            *v /= norm;
        }
        MessageVector::from_sparse(self.vocabulary.len(), indices, values)
            .expect("transform builds sorted nonnegative entries")
    }
}

impl TextVectorizer for VectorizerModel {
    fn dimension(&self) -> usize {
        self.vocabulary.len()
    }

    fn transform(&self, tokens: &TokenList) -> MessageVector {
        VectorizerModel::transform(self, tokens)
    }
}
