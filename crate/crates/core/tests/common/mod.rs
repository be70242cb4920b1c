//! Naive reference classifier for cross-checking the engine: dense vectors,
//! raw weights, a full sort and a hand-written vote. Shares no code with the
//! engine except the stopword list.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use triage_core::text::is_stopword;
use triage_core::{Event, Kind, Label, LabeledEvent};

pub fn naive_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        .filter(|t| !t.is_empty())
        .filter(|t| !is_stopword(t))
        .filter(|t| {
            let letters = t.chars().any(|c| c.is_ascii_lowercase());
            let digits = t.chars().any(|c| c.is_ascii_digit());
            !(letters && digits)
        })
        .map(str::to_owned)
        .collect()
}

pub struct NaiveModel {
    vocab: Vec<String>,
    idf: Vec<f64>,
    rows: Vec<([String; 4], Vec<f64>, Label)>,
    weights: [f64; 5],
    k: usize,
}

pub struct NaiveResult {
    pub class_id: String,
    pub probability: f64,
    pub confidence: f64,
    pub neighbor_ids: Vec<usize>,
}

fn cats(e: &Event) -> [String; 4] {
    [
        e.error_code.clone(),
        e.sql_type.clone(),
        e.sql_subtype.clone(),
        e.request_type.clone(),
    ]
}

impl NaiveModel {
    /// `weights` ordered error_code, error_message, sql_type, sql_subtype,
    /// request_type. Trace excerpts are ignored.
    pub fn fit(training: &[LabeledEvent], weights: [f64; 5], k: usize, min_tf: usize) -> Self {
        let docs: Vec<Vec<String>> = training
            .iter()
            .map(|t| naive_tokens(&t.event.error_message))
            .collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for d in &docs {
            let unique: BTreeSet<&str> = d.iter().map(String::as_str).collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, c)| c >= min_tf).collect();
        let vocab: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
        let idf: Vec<f64> = kept
            .iter()
            .map(|&(_, c)| ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0)
            .collect();
        let mut model = NaiveModel {
            vocab,
            idf,
            rows: Vec::new(),
            weights,
            k,
        };
        model.rows = training
            .iter()
            .map(|t| (cats(&t.event), model.vector(&t.event.error_message), t.label.clone()))
            .collect();
        model
    }

    pub fn vector(&self, message: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.vocab.len()];
        for t in naive_tokens(message) {
            if let Some(i) = self.vocab.iter().position(|w| *w == t) {
                v[i] += self.idf[i];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    fn cosine(u: &[f64], v: &[f64]) -> f64 {
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        match (nu == 0.0, nv == 0.0) {
            (true, true) => 0.0,
            (true, false) | (false, true) => 1.0,
            _ => {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                (1.0 - dot / (nu * nv)).clamp(0.0, 1.0)
            }
        }
    }

    fn distance(&self, q_cats: &[String; 4], q_vec: &[f64], row: usize) -> f64 {
        let (r_cats, r_vec, _) = &self.rows[row];
        let d = |a: &String, b: &String| if a == b { 0.0 } else { 1.0 };
        let parts = [
            d(&q_cats[0], &r_cats[0]),
            Self::cosine(q_vec, r_vec),
            d(&q_cats[1], &r_cats[1]),
            d(&q_cats[2], &r_cats[2]),
            d(&q_cats[3], &r_cats[3]),
        ];
        let num: f64 = parts.iter().zip(&self.weights).map(|(p, w)| p * w).sum();
        num / self.weights.iter().sum::<f64>()
    }

    pub fn classify(&self, event: &Event) -> NaiveResult {
        let q_cats = cats(event);
        let q_vec = self.vector(&event.error_message);
        let mut all: Vec<(f64, usize)> = (0..self.rows.len())
            .map(|i| (self.distance(&q_cats, &q_vec, i), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let top = &all[..self.k];

        let mut votes: BTreeMap<String, f64> = BTreeMap::new();
        let exact: Vec<&(f64, usize)> = top.iter().filter(|(d, _)| *d < 1e-12).collect();
        if exact.is_empty() {
            for (d, i) in top {
                *votes.entry(self.rows[*i].2.class_id.clone()).or_default() += 1.0 / d;
            }
        } else {
            for (_, i) in exact {
                *votes.entry(self.rows[*i].2.class_id.clone()).or_default() += 1.0;
            }
        }
        let total: f64 = votes.values().sum();
        let mut best: Option<(&String, f64)> = None;
        for (c, v) in &votes {
            if best.is_none_or(|(_, bv)| *v > bv) {
                best = Some((c, *v));
            }
        }
        let (class_id, vote) = best.unwrap();
        let nearest_same = top
            .iter()
            .filter(|(_, i)| &self.rows[*i].2.class_id == class_id)
            .map(|(d, _)| *d)
            .fold(f64::INFINITY, f64::min);
        NaiveResult {
            class_id: class_id.clone(),
            probability: vote / total,
            confidence: 1.0 - nearest_same / 1.0,
            neighbor_ids: top.iter().map(|(_, i)| *i).collect(),
        }
    }
}

const FUZZ_WORDS: &[&str] = &[
    "lock", "wait", "timeout", "volume", "invalid", "argument", "table", "view", "column",
    "memory", "allocation", "failed", "cursor", "plan", "partition", "index", "rollback",
    "deadlock", "session", "catalog", "object", "schema", "value", "overflow", "conversion",
];

/// A random event with decorations the tokenizer must handle: mixed case,
/// punctuation, pure numbers, temporary names and stopwords.
pub fn fuzz_event<R: Rng>(rng: &mut R, id: String) -> Event {
    let n = rng.gen_range(0..8);
    let mut parts: Vec<String> = Vec::new();
    for _ in 0..n {
        let w = FUZZ_WORDS.choose(rng).unwrap();
        parts.push(match rng.gen_range(0..10) {
            0 => w.to_uppercase(),
            1 => format!("{w}_{}x{}", rng.gen_range(0..99), rng.gen_range(0..99)),
            2 => "could not".to_string(),
            3 => rng.gen_range(1..60).to_string(),
            _ => w.to_string(),
        });
    }
    let sep = [" ", ", ", ": ", "/", " - "];
    let mut msg = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            msg.push_str(sep.choose(rng).unwrap());
        }
        msg.push_str(p);
    }
    if msg.is_empty() || rng.gen_bool(0.05) {
        msg.push_str(" zz9q");
    }
    Event {
        event_id: id,
        error_code: rng.gen_range(1..5).to_string(),
        error_message: msg,
        sql_type: rng.gen_range(1..3).to_string(),
        sql_subtype: rng.gen_range(1..4).to_string(),
        request_type: format!("Type{}", rng.gen_range(1..3)),
        trace_excerpt: None,
    }
}

pub fn fuzz_training<R: Rng>(rng: &mut R, n: usize, n_classes: usize) -> Vec<LabeledEvent> {
    (0..n)
        .map(|i| {
            let class = format!("C{}", rng.gen_range(0..n_classes));
            LabeledEvent::new(fuzz_event(rng, format!("t{i}")), Label::new(class, Kind::FalsePositive))
        })
        .collect()
}
