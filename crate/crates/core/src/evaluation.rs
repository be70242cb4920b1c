//! Stratified cross-validation and the metrics reported for it.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::EuclideanBaseline;
use crate::classifier::Model;
use crate::config::EngineConfig;
use crate::downsample::downsample_with;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::{Classification, FeatureWeights, Label, LabeledEvent, Thresholds};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub splits: Vec<Split>,
    /// Classes with fewer members than folds; they are only ever trained on.
    pub train_only_classes: Vec<String>,
    pub warnings: Vec<String>,
}

/// Index splits with every class spread evenly over the folds.
///
/// Each class is shuffled with a generator seeded from `seed`, then dealt
/// round-robin. The starting fold rotates with the running sample count so
/// remainders do not pile up in the first fold.
pub fn stratified_kfold(data: &[LabeledEvent], k_folds: usize, seed: u64) -> Result<Folds> {
    if k_folds < 2 {
        return Err(Error::validation("folds", "must be at least 2"));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, le) in data.iter().enumerate() {
        by_class.entry(le.label.class_id.as_str()).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Evaluation(format!(
            "need at least 2 classes, found {}",
            by_class.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![None; data.len()];
    let mut train_only_classes = Vec::new();
    let mut warnings = Vec::new();
    let mut offset = 0;
    for (class, mut members) in by_class {
        members.shuffle(&mut rng);
        if members.len() < k_folds {
            warnings.push(format!(
                "class {class} has {} samples, fewer than {k_folds} folds; used for training only",
                members.len()
            ));
            train_only_classes.push(class.to_owned());
            continue;
        }
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = Some((offset + j) % k_folds);
        }
        offset += members.len();
    }
    let splits = (0..k_folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.len()).partition(|&i| fold_of[i] == Some(f));
            Split { train, test }
        })
        .collect();
    Ok(Folds {
        splits,
        train_only_classes,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub weighted: f64,
    #[serde(rename = "macro")]
    pub macro_f1: f64,
    /// F1 of every class present in `y_true`.
    pub per_class: BTreeMap<String, f64>,
}

/// Weighted and macro F1. Both average over the classes of `y_true` only;
/// a class that is only ever predicted still costs precision elsewhere.
pub fn f1_scores<S: AsRef<str>>(y_true: &[S], y_pred: &[S]) -> Result<F1Scores> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Evaluation("no samples".into()));
    }
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for (t, p) in y_true.iter().zip(y_pred) {
        let (t, p) = (t.as_ref(), p.as_ref());
        *support.entry(t).or_default() += 1;
        *predicted.entry(p).or_default() += 1;
        if t == p {
            *tp.entry(t).or_default() += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    let (mut weighted, mut macro_sum) = (0.0, 0.0);
    for (&class, &n) in &support {
        let hits = tp.get(class).copied().unwrap_or(0) as f64;
        let pred_n = predicted.get(class).copied().unwrap_or(0) as f64;
        let precision = if pred_n > 0.0 { hits / pred_n } else { 0.0 };
        let recall = hits / n as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += f1 * n as f64;
        macro_sum += f1;
        per_class.insert(class.to_owned(), f1);
    }
    Ok(F1Scores {
        weighted: weighted / y_true.len() as f64,
        macro_f1: macro_sum / support.len() as f64,
        per_class,
    })
}

/// Counts of the four outcome categories. They partition the results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcomes {
    pub correct_certain: usize,
    /// Correct but flagged: the false uncertainties.
    pub correct_uncertain: usize,
    pub wrong_certain: usize,
    pub wrong_uncertain: usize,
}

impl Outcomes {
    pub fn tally<'a>(results: impl IntoIterator<Item = (&'a Classification, &'a Label)>) -> Self {
        let mut o = Outcomes::default();
        for (c, truth) in results {
            match (c.predicted.class_id == truth.class_id, c.uncertain) {
                (true, false) => o.correct_certain += 1,
                (true, true) => o.correct_uncertain += 1,
                (false, false) => o.wrong_certain += 1,
                (false, true) => o.wrong_uncertain += 1,
            }
        }
        o
    }

    pub fn total(&self) -> usize {
        self.correct_certain + self.correct_uncertain + self.wrong_certain + self.wrong_uncertain
    }

    fn fraction(&self, n: usize) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            n as f64 / self.total() as f64
        }
    }

    pub fn false_uncertainty_rate(&self) -> f64 {
        self.fraction(self.correct_uncertain)
    }

    pub fn accuracy(&self) -> f64 {
        self.fraction(self.correct_certain + self.correct_uncertain)
    }

    pub fn uncertain_rate(&self) -> f64 {
        self.fraction(self.correct_uncertain + self.wrong_uncertain)
    }

    /// The four fractions in field order.
    pub fn fractions(&self) -> [f64; 4] {
        [
            self.fraction(self.correct_certain),
            self.fraction(self.correct_uncertain),
            self.fraction(self.wrong_certain),
            self.fraction(self.wrong_uncertain),
        ]
    }
}

/// Fraction of results that are correct yet flagged uncertain; 0 when empty.
pub fn false_uncertainty_rate<'a>(
    results: impl IntoIterator<Item = (&'a Classification, &'a Label)>,
) -> f64 {
    Outcomes::tally(results).false_uncertainty_rate()
}

/// Rows are true classes, columns predicted classes, both over `labels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_pairs<S: AsRef<str>>(y_true: &[S], y_pred: &[S]) -> Self {
        let labels: BTreeSet<&str> = y_true
            .iter()
            .chain(y_pred)
            .map(|s| s.as_ref())
            .collect();
        let labels: Vec<String> = labels.into_iter().map(str::to_owned).collect();
        let index: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
        for (t, p) in y_true.iter().zip(y_pred) {
            counts[index[t.as_ref()]][index[p.as_ref()]] += 1;
        }
        ConfusionMatrix { labels, counts }
    }

    pub fn get(&self, true_class: &str, predicted: &str) -> u64 {
        let pos = |c: &str| self.labels.iter().position(|l| l == c);
        match (pos(true_class), pos(predicted)) {
            (Some(t), Some(p)) => self.counts[t][p],
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    CustomDistance,
    Euclidean,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "custom_distance" | "custom" | "cd" => Ok(Method::CustomDistance),
            "euclidean" | "ed" => Ok(Method::Euclidean),
            other => Err(Error::validation(
                "baseline",
                format!("unknown method `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub engine: EngineConfig,
    pub folds: usize,
    pub seed: u64,
    pub method: Method,
    pub execution: Execution,
    /// Downsample each training split before fitting. Test splits are never
    /// downsampled.
    pub downsample_training: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            engine: EngineConfig::default(),
            folds: 5,
            seed: 0,
            method: Method::CustomDistance,
            execution: Execution::default(),
            downsample_training: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub false_uncertainty_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub outcomes: Outcomes,
    pub per_class_f1: BTreeMap<String, f64>,
}

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub fold: usize,
    pub true_class: String,
    pub predicted_class: String,
    pub probability: f64,
    pub confidence: f64,
    pub uncertain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: Method,
    pub k: usize,
    pub weights: FeatureWeights,
    pub thresholds: Thresholds,
    pub min_term_frequency: usize,
    pub trace_augmentation: bool,
    #[serde(default)]
    pub downsample_training: bool,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ConfigEcho,
    pub folds: Vec<FoldReport>,
    /// Unweighted mean of the per-fold metrics.
    pub mean: Metrics,
    /// Summed over all test folds.
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
    /// Held-out predictions in fold order, then input order.
    pub predictions: Vec<Prediction>,
}

impl EvaluationReport {
    /// F1 over the pooled predictions whose true class is in `classes`.
    pub fn f1_restricted(&self, classes: &[&str]) -> Result<F1Scores> {
        let (t, p): (Vec<&str>, Vec<&str>) = self
            .predictions
            .iter()
            .filter(|p| classes.contains(&p.true_class.as_str()))
            .map(|p| (p.true_class.as_str(), p.predicted_class.as_str()))
            .unzip();
        f1_scores(&t, &p)
    }
}

enum Fitted {
    Custom(Model),
    Euclidean(EuclideanBaseline),
}

impl Fitted {
    fn fit(method: Method, training: &[LabeledEvent], config: &EngineConfig) -> Result<Self> {
        Ok(match method {
            Method::CustomDistance => Fitted::Custom(Model::fit(training, config)?),
            Method::Euclidean => Fitted::Euclidean(EuclideanBaseline::fit(training, config)?),
        })
    }

    fn classify(&self, le: &LabeledEvent) -> Result<Classification> {
        match self {
            Fitted::Custom(m) => m.classify(&le.event),
            Fitted::Euclidean(b) => b.classify(&le.event),
        }
    }
}

fn run_fold(
    data: &[LabeledEvent],
    split: &Split,
    fold: usize,
    cv: &CvConfig,
) -> Result<(FoldReport, Vec<Prediction>)> {
    let mut train: Vec<LabeledEvent> = split.train.iter().map(|&i| data[i].clone()).collect();
    if cv.downsample_training {
        train = downsample_with(cv.execution, &train, &cv.engine)?.kept;
    }
    let fitted = Fitted::fit(cv.method, &train, &cv.engine)?;
    let results = par::map(cv.execution, &split.test, |&i| fitted.classify(&data[i]));
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let truths: Vec<&Label> = split.test.iter().map(|&i| &data[i].label).collect();
    let y_true: Vec<&str> = truths.iter().map(|l| l.class_id.as_str()).collect();
    let y_pred: Vec<&str> = results.iter().map(|c| c.predicted.class_id.as_str()).collect();
    let f1 = f1_scores(&y_true, &y_pred)?;
    let outcomes = Outcomes::tally(results.iter().zip(truths.iter().copied()));
    let predictions = split
        .test
        .iter()
        .zip(&results)
        .map(|(&index, c)| Prediction {
            index,
            fold,
            true_class: data[index].label.class_id.clone(),
            predicted_class: c.predicted.class_id.clone(),
            probability: c.probability,
            confidence: c.confidence,
            uncertain: c.uncertain,
        })
        .collect();
    let report = FoldReport {
        fold,
        train_size: train.len(),
        test_size: split.test.len(),
        metrics: Metrics {
            weighted_f1: f1.weighted,
            macro_f1: f1.macro_f1,
            accuracy: outcomes.accuracy(),
            false_uncertainty_rate: outcomes.false_uncertainty_rate(),
        },
        outcomes,
        per_class_f1: f1.per_class,
    };
    Ok((report, predictions))
}

/// Fits on each training split, classifies its test split, and averages the
/// fold metrics. Folds run concurrently under parallel execution; the report
/// does not depend on scheduling.
pub fn cross_validate(data: &[LabeledEvent], cv: &CvConfig) -> Result<EvaluationReport> {
    cv.engine.validate()?;
    let folds = stratified_kfold(data, cv.folds, cv.seed)?;
    let outcomes = par::map_range(cv.execution, folds.splits.len(), |f| {
        run_fold(data, &folds.splits[f], f, cv).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })
    });
    let mut fold_reports = Vec::with_capacity(outcomes.len());
    let mut predictions = Vec::new();
    for outcome in outcomes {
        let (report, preds) = outcome?;
        fold_reports.push(report);
        predictions.extend(preds);
    }
    let n = fold_reports.len() as f64;
    let mean_of = |f: fn(&Metrics) -> f64| fold_reports.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let mean = Metrics {
        weighted_f1: mean_of(|m| m.weighted_f1),
        macro_f1: mean_of(|m| m.macro_f1),
        accuracy: mean_of(|m| m.accuracy),
        false_uncertainty_rate: mean_of(|m| m.false_uncertainty_rate),
    };
    let y_true: Vec<&str> = predictions.iter().map(|p| p.true_class.as_str()).collect();
    let y_pred: Vec<&str> = predictions.iter().map(|p| p.predicted_class.as_str()).collect();
    Ok(EvaluationReport {
        config: ConfigEcho {
            method: cv.method,
            k: cv.engine.k,
            weights: cv.engine.weights.clone(),
            thresholds: cv.engine.thresholds,
            min_term_frequency: cv.engine.min_term_frequency,
            trace_augmentation: cv.engine.trace_rules.is_some(),
            downsample_training: cv.downsample_training,
            folds: cv.folds,
            seed: cv.seed,
        },
        folds: fold_reports,
        mean,
        confusion: ConfusionMatrix::from_pairs(&y_true, &y_pred),
        warnings: folds.warnings,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Event, Kind, Neighbor};
    use proptest::prelude::*;

    fn le(i: usize, class: &str) -> LabeledEvent {
        LabeledEvent::new(
            Event {
                event_id: format!("e{i}"),
                error_code: "1".into(),
                error_message: "x".into(),
                sql_type: "1".into(),
                sql_subtype: "1".into(),
                request_type: "T".into(),
                trace_excerpt: None,
            },
            Label::new(class, Kind::FalsePositive),
        )
    }

    fn dataset(sizes: &[(&str, usize)]) -> Vec<LabeledEvent> {
        let mut out = Vec::new();
        for &(c, n) in sizes {
            for _ in 0..n {
                out.push(le(out.len(), c));
            }
        }
        out
    }

    #[test]
    fn folds_are_proportional() {
        let data = dataset(&[("A", 100), ("B", 50)]);
        let folds = stratified_kfold(&data, 5, 42).unwrap();
        for split in &folds.splits {
            let a = split.test.iter().filter(|&&i| data[i].label.class_id == "A").count();
            assert_eq!((a, split.test.len() - a), (20, 10));
            assert_eq!(split.train.len() + split.test.len(), 150);
        }
        assert!(folds.warnings.is_empty());
    }

    #[test]
    fn tiny_class_is_train_only() {
        let data = dataset(&[("A", 20), ("B", 3)]);
        let folds = stratified_kfold(&data, 5, 1).unwrap();
        assert_eq!(folds.train_only_classes, vec!["B".to_string()]);
        assert_eq!(folds.warnings.len(), 1);
        for split in &folds.splits {
            assert!(split.test.iter().all(|&i| data[i].label.class_id == "A"));
            assert!((20..23).all(|i| split.train.contains(&i)));
        }
    }

    #[test]
    fn fold_preconditions() {
        let data = dataset(&[("A", 20)]);
        assert!(stratified_kfold(&data, 5, 0).is_err());
        let data = dataset(&[("A", 20), ("B", 20)]);
        assert!(stratified_kfold(&data, 1, 0).is_err());
        assert_eq!(
            stratified_kfold(&data, 4, 9).unwrap(),
            stratified_kfold(&data, 4, 9).unwrap()
        );
    }

    #[test]
    fn f1_hand_example() {
        let f = f1_scores(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).unwrap();
        assert!((f.per_class["A"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.per_class["B"] - 0.8).abs() < 1e-12);
        let expected = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((f.macro_f1 - expected).abs() < 1e-12);
        assert!((f.weighted - expected).abs() < 1e-12);
    }

    #[test]
    fn f1_perfect_and_errors() {
        let f = f1_scores(&["A", "B", "B"], &["A", "B", "B"]).unwrap();
        assert_eq!((f.weighted, f.macro_f1), (1.0, 1.0));
        assert!(f1_scores(&["A"], &["A", "B"]).is_err());
        assert!(f1_scores::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn predicted_only_class_excluded_from_macro() {
        // A: P = 1/1, R = 1/2 -> 2/3. B: P = 1/1, R = 1 -> 1. C never true.
        let t = ["A", "A", "B"];
        let p = ["A", "C", "B"];
        let f = f1_scores(&t, &p).unwrap();
        assert!(!f.per_class.contains_key("C"));
        assert!((f.macro_f1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        let cm = ConfusionMatrix::from_pairs(&t, &p);
        assert_eq!(cm.get("A", "C"), 1);
        assert_eq!(cm.labels, vec!["A", "B", "C"]);
    }

    fn classification(pred: &str, uncertain: bool) -> Classification {
        Classification {
            event_id: "e".into(),
            predicted: Label::new(pred, Kind::FalsePositive),
            probability: 1.0,
            confidence: 1.0,
            uncertain,
            neighbors: Vec::<Neighbor>::new(),
        }
    }

    #[test]
    fn false_uncertainty_counts() {
        let truth = Label::new("A", Kind::FalsePositive);
        let mut results: Vec<Classification> = (0..98).map(|_| classification("A", false)).collect();
        results.push(classification("A", true));
        results.push(classification("A", true));
        let rate = false_uncertainty_rate(results.iter().map(|c| (c, &truth)));
        assert!((rate - 0.02).abs() < 1e-15);
        let all_good: Vec<_> = (0..5).map(|_| classification("A", false)).collect();
        assert_eq!(false_uncertainty_rate(all_good.iter().map(|c| (c, &truth))), 0.0);
    }

    fn confusion_oracle(t: &[String], p: &[String], class: &str) -> (usize, usize, usize) {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..t.len() {
            if t[i] == class && p[i] == class {
                tp += 1;
            } else if p[i] == class {
                fp += 1;
            } else if t[i] == class {
                fn_ += 1;
            }
        }
        (tp, fp, fn_)
    }

    proptest! {
        #[test]
        fn f1_matches_brute_force(pairs in prop::collection::vec((0u8..5, 0u8..5), 1..60)) {
            let t: Vec<String> = pairs.iter().map(|p| format!("c{}", p.0)).collect();
            let p: Vec<String> = pairs.iter().map(|p| format!("c{}", p.1)).collect();
            let f = f1_scores(&t, &p).unwrap();
            let classes: BTreeSet<&String> = t.iter().collect();
            let mut weighted = 0.0;
            let mut macro_sum = 0.0;
            for c in &classes {
                let (tp, fp, fn_) = confusion_oracle(&t, &p, c);
                // F1 = 2TP / (2TP + FP + FN)
                let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
                prop_assert!((f.per_class[*c] - f1).abs() < 1e-12);
                weighted += f1 * (tp + fn_) as f64;
                macro_sum += f1;
            }
            prop_assert!((f.weighted - weighted / t.len() as f64).abs() < 1e-12);
            prop_assert!((f.macro_f1 - macro_sum / classes.len() as f64).abs() < 1e-12);
        }

        #[test]
        fn outcome_fractions_sum_to_one(
            rows in prop::collection::vec((0u8..3, 0u8..3, any::<bool>()), 1..80)
        ) {
            let truths: Vec<Label> = rows.iter().map(|r| Label::new(format!("c{}", r.0), Kind::TruePositive)).collect();
            let results: Vec<Classification> = rows.iter().map(|r| classification(&format!("c{}", r.1), r.2)).collect();
            let o = Outcomes::tally(results.iter().zip(&truths));
            prop_assert_eq!(o.total(), rows.len());
            let sum: f64 = o.fractions().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn kfold_partitions_eligible_samples(
            sizes in prop::collection::vec(1usize..30, 2..6),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("c{i}")).collect();
            let spec: Vec<(&str, usize)> = names.iter().map(|n| n.as_str()).zip(sizes.iter().copied()).collect();
            let data = dataset(&spec);
            let folds = stratified_kfold(&data, k, seed).unwrap();
            let mut seen = vec![0usize; data.len()];
            for split in &folds.splits {
                let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
                for &i in &split.test {
                    seen[i] += 1;
                }
            }
            for (i, le) in data.iter().enumerate() {
                let n = sizes[names.iter().position(|c| *c == le.label.class_id).unwrap()];
                prop_assert_eq!(seen[i], usize::from(n >= k));
            }
        }
    }
}
