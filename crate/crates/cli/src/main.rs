use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Meta-gradient data rating and score-based pruning for synthetic
/// condition/target corpora.
#[derive(Debug, Parser)]
#[command(name = "metaprune", version, about)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted quality tiers (JSONL).
    Gen(GenArgs),
    /// Train the rater jointly with a proxy model and score every train sample.
    Rate(RateArgs),
    /// Select a subset from a scores file.
    Prune(PruneArgs),
    /// Train a fresh proxy on a subset and record its validation-loss curve.
    Train(TrainArgs),
    /// Bin per-sample loss and gradient-norm traces by score percentile.
    Trace(TraceArgs),
    /// Retrain on subsets chosen by several strategies and tabulate val loss.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    condition_dim: Option<usize>,
    #[arg(long)]
    target_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Directory receiving scores.csv, traces.csv, val_ids.txt and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    joint_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Rater learning rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Proxy learning rate.
    #[arg(long)]
    beta: Option<f64>,
    /// `full` (loss gap against the reference model) or `simplified`.
    #[arg(long)]
    update_rule: Option<String>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

/// Shift-GSample weights a sample at percentile w by
/// exp(-(w - mean)^2 / (2 std^2)) after discarding percentiles below n.
#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    /// n: percentiles below this are dropped before sampling.
    #[arg(long)]
    drop_head: Option<f64>,
    /// Gaussian centre over percentiles.
    #[arg(long)]
    mean: Option<f64>,
    /// Gaussian spread (sigma) over percentiles.
    #[arg(long)]
    std: Option<f64>,
    /// First percentile of the window used by `block`.
    #[arg(long)]
    block_start: Option<f64>,
    /// Fraction of rated samples to keep, in (0, 1].
    #[arg(long)]
    retain: Option<f64>,
}

#[derive(Debug, Args)]
#[command(after_help = "Percentile 0 is the highest-rated sample. Flag mapping: \
--drop-head = n, --mean = sampling mean, --std = sigma.")]
pub struct PruneArgs {
    #[arg(long)]
    scores: PathBuf,
    /// full, random, topk, block, gsample or shift-gsample.
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Validation ids (as written by `rate`).
    #[arg(long)]
    val: PathBuf,
    /// Training ids; defaults to every non-validation sample.
    #[arg(long)]
    subset: Option<PathBuf>,
    /// Output CSV `epoch,val_loss`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; each drives both the sampler and the retraining.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Gen(a) => commands::gen(cfg, a),
        Command::Rate(a) => commands::rate(cfg, a),
        Command::Prune(a) => commands::prune(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Trace(a) => commands::trace(cfg, a),
        Command::Compare(a) => commands::compare(cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
