mod commands;
mod evaluate;
mod fail;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use fail::{Failure, EXIT_USAGE};

/// Root-cause triage for failed replay events.
#[derive(Debug, Parser)]
#[command(name = "triage", version)]
struct Cli {
    /// Print results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on labeled events and save the artifact.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify events; uncertain results still exit 0.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified cross-validation with a per-method summary table.
    Evaluate(evaluate::EvaluateArgs),
    /// Thin out near-duplicate events per class.
    Downsample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic corpora and replays with ground truth.
    Synth {
        #[command(subcommand)]
        what: Synth,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// List uncertain classifications with their neighbors.
    Review {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Events the results were produced from, to show message text.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Include certain results too.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Args)]
struct SynthCommon {
    /// Corpus spec (TOML, or JSON by extension). Defaults apply when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL. Ground truth goes next to it with the extension
    /// `.truth.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Synth {
    /// Labeled training corpus. `--seed` overrides the spec seed.
    Corpus(SynthCommon),
    /// Unlabeled replay drawn from the spec's classes. `--seed` seeds the
    /// replay; the classes come from the spec seed.
    Replay {
        #[command(flatten)]
        common: SynthCommon,
        #[arg(long, default_value_t = 1000)]
        events: usize,
        #[arg(long, default_value_t = 0.0)]
        novel_rate: f64,
        /// `proportional`, `uniform`, or a comma-separated class list.
        #[arg(long, default_value = "proportional")]
        mix: String,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Store directory [env: TRIAGE_STORE] [default: triage-store]
    #[arg(long)]
    store: Option<PathBuf>,
    /// Engine config file [env: TRIAGE_CONFIG]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address [env: TRIAGE_LISTEN] [default: 127.0.0.1:8080]
    #[arg(long)]
    listen: Option<String>,
    /// Labeled JSONL imported when the store is empty; a first model is
    /// trained from it.
    #[arg(long)]
    seed_data: Option<PathBuf>,
}

/// What a command reports on stdout.
pub struct Output {
    pub text: String,
    pub json: Value,
}

fn run(cli: Cli) -> Result<Output, Failure> {
    match cli.command {
        Command::Train { data, config, out } => commands::train(&data, config.as_deref(), &out),
        Command::Classify { model, events, out } => commands::classify(&model, &events, &out),
        Command::Evaluate(args) => evaluate::run(&args),
        Command::Downsample { data, config, out } => commands::downsample(&data, config.as_deref(), &out),
        Command::Synth { what: Synth::Corpus(c) } => commands::synth_corpus(c.spec.as_deref(), c.seed, &c.out),
        Command::Synth {
            what:
                Synth::Replay {
                    common,
                    events,
                    novel_rate,
                    mix,
                },
        } => commands::synth_replay(common.spec.as_deref(), common.seed, &common.out, events, novel_rate, &mix),
        Command::Serve(args) => commands::serve(args),
        Command::Review {
            model,
            results,
            events,
            all,
        } => commands::review(&model, &results, events.as_deref(), all),
    }
}

fn main() -> ExitCode {
    let json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if json && e.use_stderr() => {
            eprintln!("{}", Failure::usage(e.render().to_string().trim()).to_json());
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", out.json);
            } else {
                print!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            if json {
                eprintln!("{}", f.to_json());
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.exit_code)
        }
    }
}
