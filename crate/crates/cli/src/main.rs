mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Mode;
use crate::error::{CliError, CliResult};

/// Index-as-target self-supervised learning experiments.
#[derive(Debug, Parser)]
#[command(name = "diet-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a Gaussian-blobs dataset as CSV plus a manifest.
    GenData(GenDataArgs),
    /// Train a backbone with index targets (or the supervised baseline).
    Train(TrainArgs),
    /// Fit a linear probe on a checkpoint's frozen features.
    Probe(ProbeArgs),
    /// Check the closed-form optimum of the linear model and run the
    /// descent demo.
    Theory(TheoryArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Replay a resolved-config.json; other flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    /// Norm of every class centroid.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out samples per class written to blobs-test.csv (0 to skip).
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Training CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out CSV used by the online probe.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_test_images: Option<PathBuf>,
    #[arg(long, requires = "idx_test_images")]
    pub idx_test_labels: Option<PathBuf>,
    /// `linear` or `mlp:H1[,H2...]`.
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Augmentation strength 0-3 (image data only above 0).
    #[arg(long)]
    pub augment: Option<u8>,
    /// Model input size for images, as HxW.
    #[arg(long, value_parser = parse_size)]
    pub image_size: Option<(usize, usize)>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate before batch-size scaling.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Scale the learning rate by batch_size / 256.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lr_scaling: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs between online probes (default: epochs / 50).
    #[arg(long)]
    pub probe_every: Option<usize>,
    /// Record elapsed seconds in the metrics log (breaks byte-identical reruns).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub wall_clock: Option<bool>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labeled CSV the probe is fitted on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labeled CSV the probe is scored on (default: the fitting set).
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_test_images: Option<PathBuf>,
    #[arg(long, requires = "idx_test_images")]
    pub idx_test_labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_size)]
    pub image_size: Option<(usize, usize)>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
    /// Training metrics.jsonl; adds the loss/accuracy rank correlation.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Directory for report.json and resolved-config.json.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Samples per cluster.
    #[arg(long, conflicts_with = "n")]
    pub reps: Option<usize>,
    /// Total samples; must be a multiple of k.
    #[arg(long)]
    pub n: Option<usize>,
    /// Ambient dimension (at least k).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Descent demo step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Descent demo learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("DIET_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("DIET_LAB_THREADS must be a positive integer, got {raw:?}")))?;
    diet_core::par::init_threads(n);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Probe(a) => commands::probe(&a),
        Command::Theory(a) => commands::theory(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diet-lab: {e}");
            e.exit_code()
        }
    }
}
