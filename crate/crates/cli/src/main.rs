//! `deltamem`: capacity curves, equivalence checks, exact state tracking and
//! toy training runs from the command line.

mod commands;
mod error;
mod kernel;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::kernel::KernelName;
use crate::settings::List;

#[derive(Parser, Debug)]
#[command(name = "deltamem", version, about = "Associative-memory experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inverse retrieval SNR against the number of stored pairs.
    Snr(SnrArgs),
    /// Naive, inverse and chunked u agreement plus the memory-update gradient checks.
    Equivalence(EquivalenceArgs),
    /// Exact swap tracking with almost-orthogonal keys.
    Track(TrackArgs),
    /// Train a toy model on the swap or DAG reachability task.
    Train(TrainArgs),
    /// Final loss against head count at fixed width.
    Headtradeoff(HeadArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Flat key=value file (or a run manifest) supplying defaults for any option.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for CSV outputs and the run manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SnrArgs {
    #[command(flatten)]
    pub common: Common,
    /// linear, exp, relu or solu.
    #[arg(long)]
    pub kernel: Option<KernelName>,
    #[arg(long)]
    pub dk: Option<usize>,
    #[arg(long)]
    pub n_list: Option<List<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Temperature for exp and solu; defaults to sqrt(dk).
    #[arg(long)]
    pub tau: Option<f64>,
    /// CSV path; stdout when neither this nor --out-dir is given.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EquivalenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub chunk: Option<usize>,
    /// softmaxz (normalised), exp, linear, relu or solu.
    #[arg(long)]
    pub kernel1: Option<KernelName>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Head dimension of the random sequences.
    #[arg(long)]
    pub d: Option<usize>,
    /// Standard deviation of the random keys.
    #[arg(long)]
    pub key_scale: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub swaps: Option<usize>,
    /// Target coherence of the generated keys.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Rebuild the cache from recalled values every this many swaps.
    #[arg(long)]
    pub compact_every: Option<usize>,
    /// round (lattice rounding) or linear.
    #[arg(long)]
    pub kernel1: Option<KernelName>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// swap or dag.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// standard, linear or deltaformer.
    #[arg(long)]
    pub attn: Option<String>,
    #[arg(long)]
    pub kernel1: Option<KernelName>,
    #[arg(long)]
    pub kernel2: Option<KernelName>,
    /// Decimal places kept by the round kernel.
    #[arg(long)]
    pub round_decimals: Option<i32>,
    /// start:max:threshold, or `none`.
    #[arg(long)]
    pub curriculum: Option<String>,
    /// rope or nope.
    #[arg(long)]
    pub pos: Option<String>,
    #[arg(long)]
    pub rope_base: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Sequence length without a curriculum (swap only).
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub kv_heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Stop early, and require, this accuracy at the final length.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct HeadArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub heads: Option<List<usize>>,
    /// softmax or linear (both with per-head RMS norm).
    #[arg(long)]
    pub attn: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Pair-recall task: number of keys.
    #[arg(long)]
    pub keys: Option<usize>,
    /// Pair-recall task: values per key.
    #[arg(long)]
    pub values: Option<usize>,
    /// Pair-recall task: read positions per sequence.
    #[arg(long)]
    pub reads: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("DELTAMEM_THREADS") {
        Ok(s) if !s.trim().is_empty() => match s.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(CliError::Usage(format!(
                "DELTAMEM_THREADS must be a positive integer, got {s:?}"
            ))),
            Ok(1) => Ok(None),
            Ok(n) => Ok(Some(n)),
        },
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Snr(a) => commands::snr(a),
        Command::Equivalence(a) => commands::equivalence(a),
        Command::Track(a) => commands::track(a),
        Command::Train(a) => commands::train(a, threads_from_env()?),
        Command::Headtradeoff(a) => commands::headtradeoff(a, threads_from_env()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
