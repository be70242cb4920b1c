use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use triage_core::artifact::save_model;
use triage_core::downsample::downsample as downsample_events;
use triage_core::synthgen::{generate_corpus, ClassMix, CorpusSpec, World};
use triage_core::{Classification, Event, LabeledEvent, Model};
use triage_service::{AppState, Flags, Settings};

use crate::fail::{CmdResult, Failure};
use crate::files::{engine_config, model as load, read_document, read_jsonl, write_jsonl};
use crate::{Output, ServeArgs};

pub fn train(data: &Path, config: Option<&Path>, out: &Path) -> CmdResult<Output> {
    let config = engine_config(config)?;
    let labeled: Vec<LabeledEvent> = read_jsonl(data)?;
    let model = Model::fit(&labeled, &config)?;
    save_model(&model, out).map_err(|e| Failure::output(out, e))?;
    let classes = model.class_counts().len();
    Ok(Output {
        text: format!(
            "version {}\nclasses {classes}\nrows {}\nsaved {}\n",
            model.version(),
            model.training_size(),
            out.display()
        ),
        json: json!({
            "version": model.version(),
            "classes": classes,
            "rows": model.training_size(),
            "artifact": out,
        }),
    })
}

pub fn classify(model: &Path, events: &Path, out: &Path) -> CmdResult<Output> {
    let model = load(model)?;
    let events: Vec<Event> = read_jsonl(events)?;
    let results = model
        .classify_batch(&events)
        .into_iter()
        .collect::<triage_core::Result<Vec<Classification>>>()?;
    write_jsonl(out, &results)?;
    let uncertain = results.iter().filter(|c| c.uncertain).count();
    Ok(Output {
        text: format!(
            "classified {} events with model version {}: {uncertain} uncertain\nwrote {}\n",
            results.len(),
            model.version(),
            out.display()
        ),
        json: json!({
            "model_version": model.version(),
            "total": results.len(),
            "uncertain": uncertain,
            "out": out,
        }),
    })
}

pub fn downsample(data: &Path, config: Option<&Path>, out: &Path) -> CmdResult<Output> {
    let config = engine_config(config)?;
    let labeled: Vec<LabeledEvent> = read_jsonl(data)?;
    let reduced = downsample_events(&labeled, &config)?;
    write_jsonl(out, &reduced.kept)?;
    let mut text = format!("{:<24} {:>8} {:>8} {:>9}\n", "class", "before", "after", "clusters");
    for (class, r) in &reduced.per_class {
        writeln!(text, "{class:<24} {:>8} {:>8} {:>9}", r.before, r.after, r.clusters).unwrap();
    }
    writeln!(text, "{:<24} {:>8} {:>8}", "total", labeled.len(), reduced.kept.len()).unwrap();
    writeln!(text, "wrote {}", out.display()).unwrap();
    let per_class: serde_json::Map<String, serde_json::Value> = reduced
        .per_class
        .iter()
        .map(|(c, r)| (c.clone(), json!({"before": r.before, "after": r.after, "clusters": r.clusters})))
        .collect();
    Ok(Output {
        text,
        json: json!({
            "before": labeled.len(),
            "after": reduced.kept.len(),
            "per_class": per_class,
            "out": out,
        }),
    })
}

/// `corpus.jsonl` -> `corpus.truth.jsonl`.
pub fn truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.jsonl")
}

fn corpus_spec(path: Option<&Path>, seed: Option<u64>) -> CmdResult<CorpusSpec> {
    let mut spec: CorpusSpec = match path {
        Some(p) => read_document(p)?,
        None => CorpusSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn synth_corpus(spec: Option<&Path>, seed: Option<u64>, out: &Path) -> CmdResult<Output> {
    let spec = corpus_spec(spec, seed)?;
    let (events, truth) = generate_corpus(&spec)?;
    write_jsonl(out, &events)?;
    let rows: Vec<_> = events
        .iter()
        .zip(&truth.event_patterns)
        .map(|(e, p)| json!({"event_id": e.event.event_id, "class_id": p.class_id, "pattern": p.pattern}))
        .collect();
    let truth_out = truth_path(out);
    write_jsonl(&truth_out, &rows)?;
    let classes = truth.patterns_per_class.len();
    Ok(Output {
        text: format!(
            "{} events in {classes} classes (seed {})\nwrote {} and {}\n",
            events.len(),
            spec.seed,
            out.display(),
            truth_out.display()
        ),
        json: json!({
            "events": events.len(),
            "classes": classes,
            "seed": spec.seed,
            "out": out,
            "truth": truth_out,
        }),
    })
}

fn class_mix(raw: &str) -> CmdResult<ClassMix> {
    match raw {
        "proportional" => Ok(ClassMix::Proportional),
        "uniform" => Ok(ClassMix::Uniform),
        list => {
            let classes: Vec<String> = list.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect();
            if classes.is_empty() {
                return Err(Failure::usage("--mix: expected proportional, uniform, or a class list"));
            }
            Ok(ClassMix::Only(classes))
        }
    }
}

pub fn synth_replay(
    spec: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    n_events: usize,
    novel_rate: f64,
    mix: &str,
) -> CmdResult<Output> {
    let spec = corpus_spec(spec, None)?;
    let replay_seed = seed.unwrap_or(spec.seed);
    let (events, truth) = World::new(&spec)?.replay(n_events, &class_mix(mix)?, novel_rate, replay_seed)?;
    write_jsonl(out, &events)?;
    let truth_out = truth_path(out);
    write_jsonl(&truth_out, &truth)?;
    let novel = truth.iter().filter(|t| t.novel).count();
    Ok(Output {
        text: format!(
            "{} replay events, {novel} from novel classes (seed {replay_seed})\nwrote {} and {}\n",
            events.len(),
            out.display(),
            truth_out.display()
        ),
        json: json!({
            "events": events.len(),
            "novel": novel,
            "seed": replay_seed,
            "out": out,
            "truth": truth_out,
        }),
    })
}

pub fn serve(args: ServeArgs) -> CmdResult<Output> {
    let settings = Settings::from_env(Flags {
        listen: args.listen,
        store: args.store,
        config: args.config,
    })
    .map_err(Failure::usage)?;
    let engine = engine_config(settings.config.as_deref())?;
    let state = AppState::open(&settings.store, engine)?;
    if let Some(path) = &args.seed_data {
        let rows: Vec<LabeledEvent> = read_jsonl(path)?;
        state.seed(rows)?;
    }
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::runtime(e.to_string()))?;
    runtime
        .block_on(triage_service::serve(Arc::new(state), settings.listen))
        .map_err(|e| Failure::runtime(format!("{}: {e}", settings.listen)))?;
    Ok(Output {
        text: "stopped\n".into(),
        json: json!({"stopped": true}),
    })
}

pub fn review(model: &Path, results: &Path, events: Option<&Path>, all: bool) -> CmdResult<Output> {
    let model = load(model)?;
    let results: Vec<Classification> = read_jsonl(results)?;
    let by_id: HashMap<String, Event> = match events {
        Some(p) => read_jsonl::<Event>(p)?.into_iter().map(|e| (e.event_id.clone(), e)).collect(),
        None => HashMap::new(),
    };
    let t = model.thresholds();
    let shown: Vec<&Classification> = results.iter().filter(|c| all || c.uncertain).collect();
    let mut text = format!(
        "model version {}, k {}, thresholds probability {} confidence {}\n{} of {} results uncertain\n",
        model.version(),
        model.k(),
        t.min_probability(),
        t.min_confidence(),
        results.iter().filter(|c| c.uncertain).count(),
        results.len()
    );
    for c in &shown {
        let mut reasons = Vec::new();
        if c.probability < t.min_probability() {
            reasons.push("low probability");
        }
        if c.confidence < t.min_confidence() {
            reasons.push("low confidence");
        }
        let flag = if c.uncertain { format!("UNCERTAIN ({})", reasons.join(", ")) } else { "certain".into() };
        writeln!(
            text,
            "\n{}  predicted {} ({})  probability {:.4}  confidence {:.4}  {flag}",
            c.event_id, c.predicted.class_id, c.predicted.kind, c.probability, c.confidence
        )
        .unwrap();
        if let Some(e) = by_id.get(&c.event_id) {
            writeln!(
                text,
                "  error_code {}  sql_type {}  sql_subtype {}  request_type {}",
                e.error_code, e.sql_type, e.sql_subtype, e.request_type
            )
            .unwrap();
            writeln!(text, "  message: {}", e.error_message).unwrap();
        }
        for (i, n) in c.neighbors.iter().enumerate() {
            writeln!(text, "  {:>2}. row {:<8} {:<16} distance {:.4}", i + 1, n.row_id, n.label.class_id, n.distance).unwrap();
        }
    }
    Ok(Output {
        text,
        json: json!({
            "model_version": model.version(),
            "total": results.len(),
            "uncertain": results.iter().filter(|c| c.uncertain).count(),
            "items": shown,
        }),
    })
}
