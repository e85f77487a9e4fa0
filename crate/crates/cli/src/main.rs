//! `tempora`: the pipeline as file-to-file stages.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use thiserror::Error;

use tempora_core::consistency::{TripleMining, TripleSemantics};
use tempora_core::evaluation::EvalScope;
use tempora_core::gateway::GatewayMode;
use tempora_core::prompting::Strategy;

use config::ScalarKind;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} pairs failed, above the allowed rate {limit}")]
    GatewayFailures {
        failed: usize,
        total: usize,
        limit: f64,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::GatewayFailures { .. } => 3,
        }
    }
}

/// Parses a flag value with the same spelling as the file formats.
fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let candidates = [
        s.to_string(),
        s.to_lowercase().replace('-', "_"),
        s.to_uppercase().replace('-', "_"),
    ];
    candidates
        .iter()
        .find_map(|c| serde_json::from_value(serde_json::Value::String(c.clone())).ok())
        .ok_or_else(|| format!("unrecognized value {s:?}"))
}

fn parse_scope(s: &str) -> Result<EvalScope, String> {
    match s {
        "candidate" => Ok(EvalScope::CandidateIntersectGold),
        _ => parse_enum(s),
    }
}

#[derive(Parser)]
#[command(
    name = "tempora",
    version,
    about = "Temporal relation extraction by prompting, with consistency scoring and repair"
)]
struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with its hidden timeline.
    Synth(SynthArgs),
    /// Generate candidate pairs.
    Pairs(PairsArgs),
    /// Build prompt scripts for pairs.
    Prompts(PromptsArgs),
    /// Send scripts to the model endpoint or replay them from cache.
    Query(QueryArgs),
    /// Parse transcripts into predictions.
    Parse(ParseArgs),
    /// Uniqueness and transitivity scores.
    ScoreConsistency(ScoreArgs),
    /// Repair predictions into a consistent assignment.
    Repair(RepairArgs),
    /// Triple-match precision, recall and F1.
    Evaluate(EvaluateArgs),
    /// F1 by event distance.
    Distance(DistanceArgs),
    /// Aggregate evaluation, consistency and distance results.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    docs: Option<usize>,
    /// Medical and time-expression mentions per document.
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    timeline_out: PathBuf,
    /// Gold relations of the candidate pairs as predictions.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    /// The oracle predictions after seeded corruption.
    #[arg(long)]
    noisy_out: Option<PathBuf>,
    #[arg(long)]
    noise_seed: Option<u64>,
}

#[derive(Args)]
pub struct PairsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write mention-order predictions for the pairs.
    #[arg(long)]
    worder_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PromptsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_enum::<Strategy>)]
    strategy: Option<Strategy>,
    #[arg(long)]
    order_seed: Option<u64>,
}

#[derive(Args)]
pub struct QueryArgs {
    #[arg(long)]
    scripts: PathBuf,
    /// Transcripts JSONL.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    predictions_out: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<GatewayMode>)]
    mode: Option<GatewayMode>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_failure_rate: Option<f64>,
}

#[derive(Args)]
pub struct ParseArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fill pairs without a YES answer with the mention-order relation.
    #[arg(long, requires = "corpus")]
    combine_worder: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Predictions file, optionally named as NAME=PATH; repeatable.
    #[arg(long, required = true)]
    predictions: Vec<String>,
    #[arg(long, value_parser = parse_enum::<TripleSemantics>)]
    semantics: Option<TripleSemantics>,
    #[arg(long, value_parser = parse_enum::<TripleMining>)]
    mining: Option<TripleMining>,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RepairArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Solver report; defaults to OUT.report.json.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<u64>,
    #[arg(long, value_parser = parse_enum::<ScalarKind>)]
    scalar: Option<ScalarKind>,
    #[arg(long, value_parser = parse_enum::<TripleMining>)]
    mining: Option<TripleMining>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Predictions file, optionally named as NAME=PATH; repeatable.
    #[arg(long, required = true)]
    predictions: Vec<String>,
    /// gold or candidate.
    #[arg(long, value_parser = parse_scope)]
    scope: Option<EvalScope>,
    #[arg(long)]
    combine_worder: bool,
    /// CSV metrics.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DistanceArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Predictions file, optionally named as NAME=PATH; repeatable.
    #[arg(long, required = true)]
    predictions: Vec<String>,
    /// Markdown output.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Pairs(a) => commands::pairs(cfg, a),
        Command::Prompts(a) => commands::prompts(cfg, a),
        Command::Query(a) => commands::query(cfg, a),
        Command::Parse(a) => commands::parse(cfg, a),
        Command::ScoreConsistency(a) => commands::score_consistency(cfg, a),
        Command::Repair(a) => commands::repair(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Distance(a) => commands::distance(cfg, a),
        Command::Report(a) => commands::report(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
