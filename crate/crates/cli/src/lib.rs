//! The `grader` command: enrich, train, evaluate, grade, ablate and serve.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code: 0 on success, 1 for invalid input, 2 for runtime failures.

mod commands;
pub mod config;
pub mod experiment;

pub use config::Config;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config or input files.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "grader", version, about = "Multi-branch answer grading")]
pub struct Cli {
    /// JSON config with optional llm, encoder, model, train and service sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attach LLM-derived artifacts to every item of a dataset.
    Enrich(EnrichArgs),
    /// Split 10:1:1, train, and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Score the test split and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Score every item of an enriched file.
    Grade(GradeArgs),
    /// Train the full model and each ablated variant and compare them.
    Ablate(AblateArgs),
    /// Run the batch grading service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// live, replay or mock.
    #[arg(long)]
    pub mode: Option<grader_llm::Mode>,
    /// Response cache file (JSONL).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Dataset supplying one-shot examples. Defaults to the training split of the input.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seeds the split, the shuffling and the model initialization.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Epoch log (JSONL). Defaults to the checkpoint path with `.epochs.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Part of the checkpoint's split to score.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `all`, or a comma list of kpm, pqm, lge, tsm, cross. Full always runs.
    #[arg(long, default_value = "all")]
    pub variants: String,
    /// Runs per variant, with consecutive seeds; metrics are averaged.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value = "ablation.json")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// Runs one invocation and returns its exit code. Errors are reported as a
/// single JSON line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            e.exit_code()
        }
    }
}
