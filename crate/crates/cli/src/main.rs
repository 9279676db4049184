//! `segqual`: generate synthetic data, train the quality regressor, and run the
//! evaluation utilities from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::SEED_ENV;

#[derive(Parser)]
#[command(
    name = "segqual",
    version,
    about = "Segmentation quality estimation without ground truth"
)]
#[command(after_help = format!("Commands without --seed fall back to ${SEED_ENV}, then 0."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with mock segmenters.
    GenData(GenDataArgs),
    /// Train the quality regressor on a dataset.
    Train(TrainArgs),
    /// Score a dataset and correlate predictions with the true Dice.
    Eval(EvalArgs),
    /// Flag low-quality segmentations.
    Flag(FlagArgs),
    /// Rank segmenters by mean predicted quality.
    Benchmark(BenchmarkArgs),
    /// Choose the best-scored segmenter output per sample.
    Select(SelectArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Recover hidden masks from Dice-oracle queries.
    ReconstructDemo(ReconstructArgs),
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of images.
    #[arg(long = "n")]
    n_images: Option<usize>,
    #[arg(long)]
    objects_per_image: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Maximum prompt jitter as a fraction of the box extent.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch history CSV; defaults to the model path with a `.history.csv` suffix.
    #[arg(long)]
    history: Option<PathBuf>,
    /// 1 for Dice only, 2 for Dice and normalized Hausdorff.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    input_side: Option<usize>,
    /// Channel widths of the convolution blocks.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Fraction of samples held out for per-epoch validation.
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Use the true scores as predictions.
    #[arg(long)]
    oracle: bool,
    /// Expected model input side; a different model side is an error.
    #[arg(long)]
    input_side: Option<usize>,
    /// Evaluate only the held-out fraction of samples.
    #[arg(long)]
    holdout: Option<f64>,
    /// Directory receiving scatter.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where evaluation records come from: a scatter CSV, or a dataset scored by a
/// model or by the oracle.
#[derive(Args, Serialize)]
struct SourceArgs {
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args, Serialize)]
struct FlagArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    /// Flag records whose predicted Dice is below this value.
    #[arg(long)]
    threshold: Option<f64>,
    /// Flag this percentage of lowest-scored records.
    #[arg(long)]
    percentile: Option<f64>,
    /// Report output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchmarkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    /// Tie-break order of segmenter ids; defaults to sorted ids.
    #[arg(long, value_delimiter = ',')]
    priority: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GradCheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct ReconstructArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Side of the square hidden masks.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Amplitude of uniform noise added to every oracle answer.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a.config.as_deref(), a),
        Command::Train(a) => commands::train(a.config.as_deref(), a),
        Command::Eval(a) => commands::eval(a.config.as_deref(), a),
        Command::Flag(a) => commands::flag(a.config.as_deref(), a),
        Command::Benchmark(a) => commands::benchmark(a.config.as_deref(), a),
        Command::Select(a) => commands::select(a.config.as_deref(), a),
        Command::GradCheck(a) => commands::grad_check(a.config.as_deref(), a),
        Command::ReconstructDemo(a) => commands::reconstruct_demo(a.config.as_deref(), a),
    };
    match result {
        Ok(exit) => ExitCode::from(exit as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit as u8)
        }
    }
}
