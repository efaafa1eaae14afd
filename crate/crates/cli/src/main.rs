//! `treelens` — align model token probabilities to Python syntax trees and
//! explain where a code model is confident.
//!
//! Subcommands cover the full pipeline: fetch logprobs from an endpoint,
//! inspect alignment coverage, render per-snippet explanations, build
//! corpus-level category reports, and causally validate the scores against
//! cross-entropy. Data goes to files or standard output; logs go to standard
//! error. Exit codes: 0 success, 1 input or validation error, 2 internal
//! error.

mod commands;
mod util;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use treelens_core::cluster::Aggregator;
use treelens_core::render::{OutputFormat, RenderMode};

#[derive(Debug, Parser)]
#[command(name = "treelens", version, about = "Explain code-model confidence on Python syntax trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render per-snippet explanations from scored token sequences
    ExplainLocal(ExplainLocalArgs),
    /// Build the corpus-level category report for one model
    ExplainGlobal(ExplainGlobalArgs),
    /// Show token-to-terminal alignment coverage per snippet
    Align(AlignArgs),
    /// Estimate how syntax confidence affects cross-entropy loss
    Causal(CausalArgs),
    /// Fetch token logprobs from a completions endpoint
    FetchLogprobs(FetchArgs),
    /// Check input files without computing anything
    Validate(ValidateArgs),
}

/// Output stream shape for reporting subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    /// Human-readable tables
    Text,
    /// Machine-readable JSON
    Json,
}

#[derive(Debug, Args)]
pub struct ExplainLocalArgs {
    /// Scored token sequences (JSONL)
    #[arg(long)]
    pub tlp: PathBuf,
    /// What to draw: sequence, ast_complete, or ast_partial
    #[arg(long, default_value = "ast_complete")]
    pub mode: RenderMode,
    /// Document format: dot, svg, or html
    #[arg(long, default_value = "svg")]
    pub render_format: OutputFormat,
    /// Aggregation function: median, mean, or max
    #[arg(long, default_value = "median")]
    pub agg: Aggregator,
    /// Directory for rendered files and annotation sidecars
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Only these snippet ids (repeatable; default: all)
    #[arg(long)]
    pub snippet: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExplainGlobalArgs {
    /// Dataset snippets (JSONL)
    #[arg(long)]
    pub dataset: PathBuf,
    /// Scored token sequences (JSONL)
    #[arg(long)]
    pub tlp: PathBuf,
    /// Category mapping JSON; bundled mapping when omitted
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Aggregation function: median, mean, or max
    #[arg(long, default_value = "median")]
    pub agg: Aggregator,
    /// Bootstrap resamples per estimate
    #[arg(long, default_value_t = 500)]
    pub reps: u32,
    /// Master seed for bootstrap resampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Confidence threshold for pass/fail flags
    #[arg(long, default_value_t = 0.6)]
    pub tau: f64,
    /// Token cap per snippet; longer sequences are truncated
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    /// Directory for report.json, report.csv, and heatmap.json
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Standard-output shape
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    pub format: OutFormat,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Scored token sequences (JSONL)
    #[arg(long)]
    pub tlp: PathBuf,
    /// Only these snippet ids (repeatable; default: all)
    #[arg(long)]
    pub snippet: Vec<String>,
    /// Standard-output shape
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    pub format: OutFormat,
}

#[derive(Debug, Args)]
pub struct CausalArgs {
    /// Dataset snippets (JSONL)
    #[arg(long)]
    pub dataset: PathBuf,
    /// Scored token sequences (JSONL)
    #[arg(long)]
    pub tlp: PathBuf,
    /// Category mapping JSON; bundled mapping when omitted
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Treatment to test: a category name, a node kind, or "intrinsic"
    /// (repeatable; default: intrinsic plus every category)
    #[arg(long)]
    pub treatment: Vec<String>,
    /// Aggregation function: median, mean, or max
    #[arg(long, default_value = "median")]
    pub agg: Aggregator,
    /// Bootstrap resamples per estimate
    #[arg(long, default_value_t = 500)]
    pub reps: u32,
    /// Seed for bootstrap resampling and placebo permutations
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Placebo permutations per treatment
    #[arg(long, default_value_t = 20)]
    pub permutations: u32,
    /// Standardize treatment and confounders before fitting
    #[arg(long)]
    pub zscore: bool,
    /// Token cap per snippet; longer sequences are truncated
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    /// Directory for causal.json and causal.csv (stdout only when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Standard-output shape
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    pub format: OutFormat,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Dataset snippets to score (JSONL)
    #[arg(long)]
    pub dataset: PathBuf,
    /// Endpoint base URL; POSTs go to {base-url}/completions
    #[arg(long)]
    pub base_url: String,
    /// Model name to request
    #[arg(long)]
    pub model: String,
    /// Output path for scored sequences (JSONL)
    #[arg(long)]
    pub out: PathBuf,
    /// Bytes of each snippet to treat as prompt context
    #[arg(long, default_value_t = 0)]
    pub prompt_bytes: usize,
    /// Request timeout in seconds
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    /// Cap on scored tokens kept per snippet
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: u32,
    /// Do not ask the endpoint to score prompt tokens
    #[arg(long)]
    pub no_echo: bool,
    /// Cache responses here for resumable, offline-repeatable runs
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Concurrent requests in flight
    #[arg(long, default_value_t = treelens_client::DEFAULT_CONCURRENCY)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Scored token sequence files to check (repeatable)
    #[arg(long)]
    pub tlp: Vec<PathBuf>,
    /// Dataset files to check (repeatable)
    #[arg(long)]
    pub dataset: Vec<PathBuf>,
    /// Category mapping files to check (repeatable)
    #[arg(long)]
    pub mapping: Vec<PathBuf>,
    /// Standard-output shape
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    pub format: OutFormat,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful output; everything else is a
            // usage error with the synopsis on standard error.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            e.print().expect("usage output is writable");
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::ExplainLocal(args) => commands::explain_local(args),
        Command::ExplainGlobal(args) => commands::explain_global(args),
        Command::Align(args) => commands::align_cmd(args),
        Command::Causal(args) => commands::causal_cmd(args),
        Command::FetchLogprobs(args) => commands::fetch_logprobs(args),
        Command::Validate(args) => commands::validate_cmd(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.code());
    }
}
