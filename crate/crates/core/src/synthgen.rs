//! Seeded synthetic corpora and replays with known ground truth.
//!
//! Every class owns fixed categorical values and one to a few message
//! patterns. A pattern is a bag of pseudo-words plus slots for a table name
//! (sometimes suffixed with a temporary name) and a `line N, pos M`
//! location. Some classes share categoricals pairwise, and a group of
//! "trace" classes share one message and one set of categoricals, differing
//! only in their trace excerpt's assertion line.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::is_stopword;
use crate::types::{Event, Kind, Label, LabeledEvent};

pub const TRACE_BASE_MESSAGE: &str =
    "further analysis is required to identify the root cause of failure";

const GENERIC_WORDS: &[&str] = &[
    "error", "table", "column", "statement", "transaction", "index", "partition", "query",
    "execution", "invalid", "lock", "timeout", "memory", "plan", "cursor", "session", "value",
    "internal", "sql", "request", "allocation", "catalog", "schema", "object", "view",
    "procedure", "parameter", "conversion", "constraint", "authorization",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalProfile {
    pub error_codes: usize,
    pub sql_types: usize,
    pub sql_subtypes: usize,
    pub request_types: usize,
}

impl Default for CategoricalProfile {
    fn default() -> Self {
        CategoricalProfile {
            error_codes: 63,
            sql_types: 5,
            sql_subtypes: 16,
            request_types: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_classes: usize,
    pub n_events: usize,
    pub false_positive_fraction: f64,
    pub patterns_per_class: PatternRange,
    /// Class sizes follow `rank^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub min_class_size: usize,
    pub categorical_profile: CategoricalProfile,
    /// Probability that an event's table name gains a temporary suffix.
    pub temp_token_rate: f64,
    /// Classes separable only through their trace excerpts.
    pub trace_class_count: usize,
    /// Class pairs sharing all categorical values.
    pub overlap_pairs: usize,
    /// Classes that never appear in a corpus, only in replays. Every second
    /// one reuses the error code of a known class.
    pub novel_class_count: usize,
    /// Probability that an event's sql_subtype or request_type is replaced
    /// by a random value.
    pub categorical_noise_rate: f64,
    /// Probability that an event of the second class of an overlap pair
    /// carries a message of its partner, making it inseparable.
    pub overlap_confusion_rate: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            n_classes: 25,
            n_events: 5000,
            false_positive_fraction: 73.0 / 93.0,
            patterns_per_class: PatternRange { min: 1, max: 4 },
            zipf_exponent: 1.1,
            min_class_size: 10,
            categorical_profile: CategoricalProfile::default(),
            temp_token_rate: 0.3,
            trace_class_count: 3,
            overlap_pairs: 3,
            novel_class_count: 2,
            categorical_noise_rate: 0.1,
            overlap_confusion_rate: 0.03,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Spec(format!("{field}: {reason}")));
        if self.n_classes < 2 {
            return bad("n_classes", "must be at least 2");
        }
        for (field, v) in [
            ("false_positive_fraction", self.false_positive_fraction),
            ("temp_token_rate", self.temp_token_rate),
            ("categorical_noise_rate", self.categorical_noise_rate),
            ("overlap_confusion_rate", self.overlap_confusion_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        let p = self.patterns_per_class;
        if p.min < 1 || p.min > p.max {
            return bad("patterns_per_class", "need 1 <= min <= max");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent", "must be finite and non-negative");
        }
        if self.trace_class_count == 1 {
            return bad("trace_class_count", "must be 0 or at least 2");
        }
        if self.trace_class_count + 2 * self.overlap_pairs > self.n_classes {
            return bad("overlap_pairs", "trace classes and overlap pairs exceed n_classes");
        }
        let floor = self.min_class_size.max(p.max);
        if self.n_events < self.n_classes * floor {
            return bad("n_events", "too small for n_classes at the minimum class size");
        }
        let c = self.categorical_profile;
        if c.sql_types == 0 || c.sql_subtypes == 0 || c.request_types == 0 {
            return bad("categorical_profile", "every attribute needs at least one value");
        }
        if self.error_codes_needed() > c.error_codes {
            return bad(
                "categorical_profile.error_codes",
                "not enough distinct error codes for the requested classes",
            );
        }
        Ok(())
    }

    fn error_codes_needed(&self) -> usize {
        self.n_classes - self.overlap_pairs - self.trace_class_count.saturating_sub(1)
            + self.novel_class_count
    }
}

#[derive(Debug, Clone)]
struct Pattern {
    core: Vec<String>,
    tables: Vec<String>,
    location: Option<(u32, u32)>,
}

#[derive(Debug, Clone)]
struct ClassDef {
    label: Label,
    categorical: [String; 4],
    prefix: String,
    patterns: Vec<Pattern>,
    pattern_weights: Vec<f64>,
    /// Assertion words for trace classes.
    trace_words: Option<Vec<String>>,
    /// Patterns of an overlap partner this class sometimes emits.
    confusable: Vec<Pattern>,
}

/// Which pattern produced each corpus event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternKey {
    pub class_id: String,
    pub pattern: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    /// Aligned with the corpus events.
    pub event_patterns: Vec<PatternKey>,
    pub patterns_per_class: BTreeMap<String, usize>,
    pub trace_classes: Vec<String>,
    pub overlap_pairs: Vec<(String, String)>,
    pub novel_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTruth {
    pub event_id: String,
    pub label: Label,
    pub pattern: usize,
    pub novel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "classes")]
pub enum ClassMix {
    /// Class frequencies follow the corpus sizes.
    Proportional,
    Uniform,
    /// Uniform over the listed known classes.
    Only(Vec<String>),
}

struct Words<'a> {
    rng: &'a mut ChaCha8Rng,
    taken: HashSet<String>,
}

impl Words<'_> {
    fn fresh(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*CONSONANTS.choose(self.rng).unwrap() as char);
                w.push(*VOWELS.choose(self.rng).unwrap() as char);
            }
            if self.rng.gen_bool(0.3) {
                w.push(*CONSONANTS.choose(self.rng).unwrap() as char);
            }
            if !is_stopword(&w) && !GENERIC_WORDS.contains(&w.as_str()) && self.taken.insert(w.clone()) {
                return w;
            }
        }
    }

    fn several(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

/// All class definitions for a spec. Corpora and replays drawn from the
/// same spec share these definitions.
pub struct World {
    spec: CorpusSpec,
    classes: Vec<ClassDef>,
    novel: Vec<ClassDef>,
    sizes: Vec<usize>,
    trace_classes: Vec<usize>,
    overlap_pairs: Vec<(usize, usize)>,
}

fn zipf_sizes(spec: &CorpusSpec) -> Vec<usize> {
    let raw: Vec<f64> = (1..=spec.n_classes)
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    let floor = spec.min_class_size.max(spec.patterns_per_class.max);
    let mut sizes: Vec<usize> = raw
        .iter()
        .map(|w| ((w / total) * spec.n_events as f64).round() as usize)
        .map(|n| n.max(floor))
        .collect();
    // absorb rounding in the largest class, never pushing it below the floor
    let sum: usize = sizes.iter().sum();
    if sum > spec.n_events {
        let mut excess = sum - spec.n_events;
        for s in sizes.iter_mut() {
            let take = excess.min(s.saturating_sub(floor));
            *s -= take;
            excess -= take;
        }
    } else {
        sizes[0] += spec.n_events - sum;
    }
    sizes
}

impl World {
    pub fn new(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        let profile = spec.categorical_profile;
        let mut codes: Vec<u32> = Vec::new();
        while codes.len() < profile.error_codes {
            let c = rng.gen_range(2..4000);
            if !codes.contains(&c) {
                codes.push(c);
            }
        }
        let mut next_code = codes.into_iter();
        let n = spec.n_classes;

        // trace classes sit in the middle of the size ranking
        let trace_start = n / 3;
        let trace_classes: Vec<usize> = (trace_start..trace_start + spec.trace_class_count)
            .map(|i| i.min(n - 1))
            .collect();
        let candidates: Vec<usize> = (1..n).chain([0]).filter(|i| !trace_classes.contains(i)).collect();
        let overlap_pairs: Vec<(usize, usize)> = (0..spec.overlap_pairs)
            .map(|i| (candidates[2 * i], candidates[2 * i + 1]))
            .collect();

        let tp_count = ((1.0 - spec.false_positive_fraction) * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let is_tp: HashSet<usize> = order.into_iter().take(tp_count).collect();

        let mut words = Words {
            rng: &mut rng,
            taken: HashSet::new(),
        };
        let mut defs: Vec<Option<ClassDef>> = vec![None; n];
        let mut trace_cats: Option<[String; 4]> = None;
        for i in 0..n {
            let partner = overlap_pairs
                .iter()
                .find(|(_, b)| *b == i)
                .map(|(a, _)| *a);
            let categorical = if let Some(a) = partner {
                defs[a].as_ref().unwrap().categorical.clone()
            } else if trace_classes.contains(&i) && trace_cats.is_some() {
                trace_cats.clone().unwrap()
            } else {
                let code = next_code.next().expect("validated error code capacity");
                random_categoricals(code, profile, words.rng)
            };
            if trace_classes.contains(&i) && trace_cats.is_none() {
                trace_cats = Some(categorical.clone());
            }
            let prefix = match partner {
                Some(a) => defs[a].as_ref().unwrap().prefix.clone(),
                None => random_prefix(words.rng),
            };
            let label = class_label(format!("RC{:03}", i + 1), is_tp.contains(&i), i);
            let mut def = if trace_classes.contains(&i) {
                trace_class(label, categorical, &mut words)
            } else {
                ordinary_class(label, categorical, prefix, spec.patterns_per_class, &mut words)
            };
            if let Some(a) = partner {
                def.confusable = defs[a].as_ref().unwrap().patterns.clone();
            }
            defs[i] = Some(def);
        }
        let classes: Vec<ClassDef> = defs.into_iter().map(Option::unwrap).collect();

        let lenders: Vec<usize> = (0..n).filter(|i| !trace_classes.contains(i)).collect();
        let novel = (0..spec.novel_class_count)
            .map(|j| {
                let mut categorical = random_categoricals(0, profile, words.rng);
                categorical[0] = if j % 2 == 1 {
                    classes[lenders[(7 * j) % lenders.len()]].categorical[0].clone()
                } else {
                    next_code.next().expect("validated error code capacity").to_string()
                };
                let tp = words.rng.gen_bool(0.5);
                let label = class_label(format!("NEW{:02}", j + 1), tp, 900 + j);
                let prefix = random_prefix(words.rng);
                ordinary_class(label, categorical, prefix, spec.patterns_per_class, &mut words)
            })
            .collect();

        Ok(World {
            spec: spec.clone(),
            sizes: zipf_sizes(spec),
            classes,
            novel,
            trace_classes,
            overlap_pairs,
        })
    }

    pub fn class_ids(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.class_id.clone()).collect()
    }

    pub fn novel_class_ids(&self) -> Vec<String> {
        self.novel.iter().map(|c| c.label.class_id.clone()).collect()
    }

    pub fn class_sizes(&self) -> BTreeMap<String, usize> {
        self.classes
            .iter()
            .zip(&self.sizes)
            .map(|(c, &s)| (c.label.class_id.clone(), s))
            .collect()
    }

    fn truth_skeleton(&self) -> CorpusTruth {
        let id = |i: usize| self.classes[i].label.class_id.clone();
        CorpusTruth {
            event_patterns: Vec::new(),
            patterns_per_class: self
                .classes
                .iter()
                .map(|c| (c.label.class_id.clone(), c.patterns.len()))
                .collect(),
            trace_classes: self.trace_classes.iter().map(|&i| id(i)).collect(),
            overlap_pairs: self.overlap_pairs.iter().map(|&(a, b)| (id(a), id(b))).collect(),
            novel_classes: self.novel_class_ids(),
        }
    }

    pub fn corpus(&self) -> (Vec<LabeledEvent>, CorpusTruth) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(2);
        let mut temp = TempNames::default();
        let mut drawn: Vec<(usize, usize)> = Vec::with_capacity(self.spec.n_events);
        for (ci, (class, &size)) in self.classes.iter().zip(&self.sizes).enumerate() {
            // every pattern appears at least once
            for p in 0..class.patterns.len() {
                drawn.push((ci, p));
            }
            for _ in class.patterns.len()..size {
                drawn.push((ci, pick_weighted(&class.pattern_weights, &mut rng)));
            }
        }
        drawn.shuffle(&mut rng);
        let mut truth = self.truth_skeleton();
        let mut events = Vec::with_capacity(drawn.len());
        for (n, (ci, p)) in drawn.into_iter().enumerate() {
            let class = &self.classes[ci];
            let event = render(
                class,
                p,
                format!("C{}-{:06}", self.spec.seed, n),
                &self.spec,
                &mut temp,
                &mut rng,
            );
            events.push(LabeledEvent::new(event, class.label.clone()));
            truth.event_patterns.push(PatternKey {
                class_id: class.label.class_id.clone(),
                pattern: p,
            });
        }
        (events, truth)
    }

    /// Events drawn per `mix` from the known classes, with each event coming
    /// from a novel class instead with probability `novel_class_rate`.
    pub fn replay(
        &self,
        n_events: usize,
        mix: &ClassMix,
        novel_class_rate: f64,
        seed: u64,
    ) -> Result<(Vec<Event>, Vec<ReplayTruth>)> {
        if !(0.0..=1.0).contains(&novel_class_rate) {
            return Err(Error::Spec("novel_class_rate: must lie in [0, 1]".into()));
        }
        if novel_class_rate > 0.0 && self.novel.is_empty() {
            return Err(Error::Spec("novel_class_rate > 0 needs novel_class_count > 0".into()));
        }
        let weights: Vec<f64> = match mix {
            ClassMix::Proportional => self.sizes.iter().map(|&s| s as f64).collect(),
            ClassMix::Uniform => vec![1.0; self.classes.len()],
            ClassMix::Only(ids) => {
                for id in ids {
                    if !self.classes.iter().any(|c| &c.label.class_id == id) {
                        return Err(Error::Spec(format!("class_mix: unknown class `{id}`")));
                    }
                }
                self.classes
                    .iter()
                    .map(|c| f64::from(u8::from(ids.contains(&c.label.class_id))))
                    .collect()
            }
        };
        if novel_class_rate < 1.0 && weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Spec("class_mix selects no classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let mut temp = TempNames::default();
        let mut events = Vec::with_capacity(n_events);
        let mut truth = Vec::with_capacity(n_events);
        for n in 0..n_events {
            let novel = rng.gen_bool(novel_class_rate);
            let class = if novel {
                self.novel.choose(&mut rng).unwrap()
            } else {
                &self.classes[pick_weighted(&weights, &mut rng)]
            };
            let p = pick_weighted(&class.pattern_weights, &mut rng);
            let event_id = format!("R{seed}-{n:06}");
            events.push(render(
                class,
                p,
                event_id.clone(),
                &self.spec,
                &mut temp,
                &mut rng,
            ));
            truth.push(ReplayTruth {
                event_id,
                label: class.label.clone(),
                pattern: p,
                novel,
            });
        }
        Ok((events, truth))
    }
}

fn class_label(class_id: String, true_positive: bool, ordinal: usize) -> Label {
    if true_positive {
        Label::new(class_id, Kind::TruePositive).with_bug(format!("BUG-{}", 10_000 + ordinal))
    } else {
        Label::new(class_id, Kind::FalsePositive)
    }
}

// Within-pattern variation. Kept small enough that rows of one pattern stay
// near-duplicates under the default grouping threshold.
const TABLES_PER_PATTERN: usize = 3;
const DROP_WORD_RATE: f64 = 0.2;

fn random_categoricals(code: u32, p: CategoricalProfile, rng: &mut ChaCha8Rng) -> [String; 4] {
    [
        code.to_string(),
        rng.gen_range(1..=p.sql_types).to_string(),
        rng.gen_range(1..=p.sql_subtypes).to_string(),
        format!("Type{}", rng.gen_range(1..=p.request_types)),
    ]
}

fn random_prefix(rng: &mut ChaCha8Rng) -> String {
    let a = GENERIC_WORDS.choose(rng).unwrap();
    let b = GENERIC_WORDS.choose(rng).unwrap();
    format!("{a} {b} error")
}

fn ordinary_class(
    label: Label,
    categorical: [String; 4],
    prefix: String,
    range: PatternRange,
    words: &mut Words,
) -> ClassDef {
    let shared = words.several(2);
    let n_patterns = words.rng.gen_range(range.min..=range.max);
    let patterns = (0..n_patterns)
        .map(|_| {
            let mut core = shared.clone();
            let specific = words.rng.gen_range(3..=5);
            core.extend(words.several(specific));
            let tables = words.several(TABLES_PER_PATTERN).into_iter().map(|t| t.to_uppercase()).collect();
            let location = words
                .rng
                .gen_bool(0.5)
                .then(|| (words.rng.gen_range(1..5000), words.rng.gen_range(1..200)));
            Pattern {
                core,
                tables,
                location,
            }
        })
        .collect();
    let pattern_weights = (0..n_patterns).map(|_| words.rng.gen_range(0.2..1.0)).collect();
    ClassDef {
        label,
        categorical,
        prefix,
        patterns,
        pattern_weights,
        trace_words: None,
        confusable: Vec::new(),
    }
}

fn trace_class(label: Label, categorical: [String; 4], words: &mut Words) -> ClassDef {
    ClassDef {
        label,
        categorical,
        prefix: String::new(),
        patterns: vec![Pattern {
            core: Vec::new(),
            tables: Vec::new(),
            location: None,
        }],
        pattern_weights: vec![1.0],
        trace_words: Some(words.several(4)),
        confusable: Vec::new(),
    }
}

fn pick_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Unique mixed letter-and-digit names, like `ijh78fk`.
#[derive(Default)]
struct TempNames {
    counter: u64,
}

impl TempNames {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> String {
        self.counter += 1;
        let mut letters = |n: usize| -> String {
            (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
        };
        let head = letters(3);
        let tail = letters(2);
        format!("{head}{}{tail}", self.counter)
    }
}

fn noise_lines(rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..rng.gen_range(1..=3))
        .map(|_| {
            format!(
                "[{}] executing replay statement {}",
                rng.gen_range(1000..9999),
                rng.gen_range(1..100_000)
            )
        })
        .collect()
}

fn render(
    class: &ClassDef,
    p: usize,
    event_id: String,
    spec: &CorpusSpec,
    temp: &mut TempNames,
    rng: &mut ChaCha8Rng,
) -> Event {
    let [error_code, sql_type, mut sql_subtype, mut request_type] = class.categorical.clone();
    let profile = spec.categorical_profile;
    if rng.gen_bool(spec.categorical_noise_rate) {
        if rng.gen_bool(0.5) {
            sql_subtype = rng.gen_range(1..=profile.sql_subtypes).to_string();
        } else {
            request_type = format!("Type{}", rng.gen_range(1..=profile.request_types));
        }
    }
    if let Some(trace_words) = &class.trace_words {
        let mut assertion: Vec<&str> = trace_words.iter().map(String::as_str).collect();
        if rng.gen_bool(0.2) {
            assertion.remove(rng.gen_range(0..assertion.len()));
        }
        let mut lines = noise_lines(rng);
        let at = rng.gen_range(0..=lines.len());
        lines.insert(
            at,
            format!("Assertion failed: {} ({}.cc)", assertion.join(" "), trace_words[0]),
        );
        return Event {
            event_id,
            error_code,
            error_message: TRACE_BASE_MESSAGE.to_owned(),
            sql_type,
            sql_subtype,
            request_type,
            trace_excerpt: Some(lines.join("\n")),
        };
    }
    let pattern = if !class.confusable.is_empty() && rng.gen_bool(spec.overlap_confusion_rate) {
        class.confusable.choose(rng).unwrap()
    } else {
        &class.patterns[p]
    };
    let mut words: Vec<&str> = pattern.core.iter().map(String::as_str).collect();
    if words.len() > 3 && rng.gen_bool(DROP_WORD_RATE) {
        words.remove(rng.gen_range(0..words.len()));
    }
    let mut table = pattern.tables.choose(rng).unwrap().clone();
    if rng.gen_bool(spec.temp_token_rate) {
        table = format!("{table}_{}", temp.next(rng));
    }
    let mut message = format!("{}: {} {}", class.prefix, words.join(" "), table);
    if let Some((line, pos)) = pattern.location {
        message.push_str(&format!(" at line {line}, pos {pos}"));
    }
    let trace_excerpt = rng.gen_bool(0.25).then(|| noise_lines(rng).join("\n"));
    Event {
        event_id,
        error_code,
        error_message: message,
        sql_type,
        sql_subtype,
        request_type,
        trace_excerpt,
    }
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<(Vec<LabeledEvent>, CorpusTruth)> {
    Ok(World::new(spec)?.corpus())
}

pub fn generate_replay(
    spec: &CorpusSpec,
    n_events: usize,
    mix: &ClassMix,
    novel_class_rate: f64,
    seed: u64,
) -> Result<(Vec<Event>, Vec<ReplayTruth>)> {
    World::new(spec)?.replay(n_events, mix, novel_class_rate, seed)
}
