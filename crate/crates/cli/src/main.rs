//! `lrdk`: decompose checkpoints, analyze costs, explore the decomposition
//! design space, and evaluate output divergence.

mod commands;
mod error;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrdk_core::precision::Precision;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "lrdk",
    version,
    about = "Rank-pruned Tucker decomposition toolkit for language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose selected weights of a checkpoint into (A, B, C) factors.
    Decompose(DecomposeArgs),
    /// Parameter, MAC, operational-intensity and roofline report.
    Analyze(AnalyzeArgs),
    /// Size, enumerate or heuristically prune the decomposition design space.
    Space(SpaceArgs),
    /// Logit divergence between two checkpoints.
    Eval(EvalArgs),
    /// Minimize energy-delay product over candidate configs under an accuracy threshold.
    Search(SearchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

/// A decomposition given either as a config document or inline. Layers are 1-indexed.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config document (`pruned_rank`, `layers`, `tensors`).
    #[arg(long, conflicts_with_all = ["pr", "layers", "tensors"])]
    pub config: Option<PathBuf>,
    /// Pruned rank applied to every selected tensor.
    #[arg(long, requires_all = ["layers", "tensors"])]
    pub pr: Option<usize>,
    /// Layers to decompose, e.g. `3,9,15` or `2-5`.
    #[arg(long, requires = "pr")]
    pub layers: Option<String>,
    /// Tensor role names, comma separated, or `all`.
    #[arg(long, requires = "pr")]
    pub tensors: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Built-in model name or spec document path.
    #[arg(long)]
    pub model: String,
    /// Input checkpoint; a seeded random one is generated when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Where to write the decomposed checkpoint (plus `<out>.manifest.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Storage precision of a generated checkpoint.
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    #[arg(long, default_value_t = 128)]
    pub seq: u64,
    #[arg(long, default_value = "f16")]
    pub precision: Precision,
    /// Hardware document (`peak_macs_per_s`, `peak_bw_bytes_per_s`, `board_power_w`); A100-like when omitted.
    #[arg(long)]
    pub hw: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpaceArgs {
    #[arg(long)]
    pub model: String,
    /// Print the exact space size (the default mode).
    #[arg(long, conflicts_with_all = ["enumerate", "heuristic"])]
    pub count_only: bool,
    /// Stream homogeneous configs in deterministic order.
    #[arg(long, conflicts_with = "heuristic")]
    pub enumerate: bool,
    /// Uniform pruned rank for enumeration.
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    /// Stop after this many configs.
    #[arg(long, default_value_t = 100)]
    pub max: u64,
    /// Layers every enumerated config must contain (1-indexed).
    #[arg(long)]
    pub include_layers: Option<String>,
    /// Layers enumerated configs may use (1-indexed).
    #[arg(long)]
    pub within_layers: Option<String>,
    #[arg(long)]
    pub min_layers: Option<usize>,
    #[arg(long)]
    pub max_layers: Option<usize>,
    /// Pick a rank-1 config reaching --target-reduction.
    #[arg(long, requires = "target_reduction")]
    pub heuristic: bool,
    /// Parameter reduction to reach, as a fraction (0.15 = 15%).
    #[arg(long)]
    pub target_reduction: Option<f64>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub decomposed: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n_inputs: usize,
    #[arg(long, default_value_t = 16)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub hw: Option<PathBuf>,
    /// Maximum tolerated accuracy drop.
    #[arg(long)]
    pub tau: f64,
    /// Candidates document with one `[[candidate]]` table per config.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Checkpoint for the accuracy proxy; a seeded random one is generated when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    #[arg(long, default_value_t = 128)]
    pub seq: u64,
    #[arg(long, default_value = "f16")]
    pub precision: Precision,
    #[arg(long, default_value_t = 8)]
    pub n_inputs: usize,
    #[arg(long, default_value_t = 16)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write the best config document here.
    #[arg(long)]
    pub best: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Decompose(a) => commands::decompose(&a, out),
        Command::Analyze(a) => commands::analyze(&a, out),
        Command::Space(a) => commands::space(&a, out),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Search(a) => commands::search(&a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::input(e.kind().to_string());
            eprintln!("{}", err.report_line());
            return ExitCode::from(err.kind.exit_code() as u8);
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let result = run(cli, &mut lock).and_then(|()| {
        lock.flush()
            .map_err(|e| CliError::io("<stdout>".as_ref(), e))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.report_line());
            ExitCode::from(err.kind.exit_code() as u8)
        }
    }
}
