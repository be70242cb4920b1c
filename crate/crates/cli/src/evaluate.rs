use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use triage_core::evaluation::{cross_validate, CvConfig, EvaluationReport, Method};
use triage_core::LabeledEvent;

use crate::fail::{CmdResult, Failure};
use crate::files::{engine_config, read_jsonl, write_json};
use crate::Output;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Add a comparison row; only `euclidean` is available.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report, keyed by method name.
    #[arg(long, default_value = "evaluation-report.json")]
    report: PathBuf,
    /// Downsample each training split before fitting.
    #[arg(long)]
    downsample_training: bool,
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::CustomDistance => "KNN + CD",
        Method::Euclidean => "KNN + ED",
    }
}

fn method_key(m: Method) -> &'static str {
    match m {
        Method::CustomDistance => "custom_distance",
        Method::Euclidean => "euclidean",
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Fixed-width summary: one row per method, then the per-fold breakdown of
/// the first.
pub fn render_table(reports: &[EvaluationReport], n_events: usize, n_classes: usize) -> String {
    let first = &reports[0];
    let mut t = format!(
        "{}-fold stratified cross-validation, seed {}, {n_events} events, {n_classes} classes\n\n",
        first.config.folds, first.config.seed
    );
    writeln!(t, "{:<10} {:>12} {:>8} {:>9} {:>13}", "Method", "F1 Weighted", "F1", "Accuracy", "False uncert.").unwrap();
    for r in reports {
        let m = &r.mean;
        writeln!(
            t,
            "{:<10} {:>12} {:>8} {:>9} {:>13}",
            method_name(r.config.method),
            pct(m.weighted_f1),
            pct(m.macro_f1),
            pct(m.accuracy),
            pct(m.false_uncertainty_rate)
        )
        .unwrap();
    }
    writeln!(t, "\nPer fold, {}", method_name(first.config.method)).unwrap();
    writeln!(t, "{:<5} {:>7} {:>6} {:>12} {:>8} {:>9} {:>13}", "fold", "train", "test", "F1 Weighted", "F1", "Accuracy", "False uncert.").unwrap();
    for f in &first.folds {
        writeln!(
            t,
            "{:<5} {:>7} {:>6} {:>12} {:>8} {:>9} {:>13}",
            f.fold + 1,
            f.train_size,
            f.test_size,
            pct(f.metrics.weighted_f1),
            pct(f.metrics.macro_f1),
            pct(f.metrics.accuracy),
            pct(f.metrics.false_uncertainty_rate)
        )
        .unwrap();
    }
    for w in &first.warnings {
        writeln!(t, "warning: {w}").unwrap();
    }
    t.push('\n');
    t
}

pub fn run(args: &EvaluateArgs) -> CmdResult<Output> {
    let engine = engine_config(args.config.as_deref())?;
    let data: Vec<LabeledEvent> = read_jsonl(&args.data)?;
    let mut methods = vec![Method::CustomDistance];
    if let Some(b) = &args.baseline {
        let m: Method = b.parse().map_err(|_| Failure::usage(format!("--baseline: unknown method `{b}`, expected euclidean")))?;
        if m != Method::Euclidean {
            return Err(Failure::usage(format!("--baseline: unknown method `{b}`, expected euclidean")));
        }
        methods.push(m);
    }
    let mut reports = Vec::new();
    for method in methods {
        let cv = CvConfig {
            engine: engine.clone(),
            folds: args.folds,
            seed: args.seed,
            method,
            downsample_training: args.downsample_training,
            ..CvConfig::default()
        };
        reports.push(cross_validate(&data, &cv)?);
    }
    let document: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|r| (method_key(r.config.method).to_owned(), serde_json::to_value(r).unwrap()))
        .collect();
    write_json(&args.report, &document)?;

    let n_classes = data.iter().map(|d| d.label.class_id.as_str()).collect::<BTreeSet<_>>().len();
    let mut text = render_table(&reports, data.len(), n_classes);
    writeln!(text, "weighted_f1 = {}", reports[0].mean.weighted_f1).unwrap();
    writeln!(text, "macro_f1 = {}", reports[0].mean.macro_f1).unwrap();
    if let Some(b) = reports.get(1) {
        writeln!(text, "baseline_weighted_f1 = {}", b.mean.weighted_f1).unwrap();
    }
    writeln!(text, "report {}", args.report.display()).unwrap();
    let mean: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|r| (method_key(r.config.method).to_owned(), serde_json::to_value(r.mean).unwrap()))
        .collect();
    Ok(Output {
        text,
        json: json!({ "mean": mean, "report": args.report }),
    })
}
