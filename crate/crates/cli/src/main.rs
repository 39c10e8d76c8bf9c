mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Video head over frozen image-text embeddings: data synthesis, training,
/// evaluation, zero-shot transfer, ablations, gradient checks and FLOP counts.
///
/// Exit status: 0 success, 2 usage, 3 shape/config, 4 numeric, 5 data format,
/// 6 labels, 7 vocabulary, 8 io, 9 gradient check or clip sampling failed.
/// VICTR_THREADS sets the worker thread count.
#[derive(Debug, Parser)]
#[command(name = "victr", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Starting configuration: synthetic, toy, b16-charades or l14-kinetics
    #[arg(long, default_value = "synthetic")]
    pub preset: String,
    /// TOML file of head.*, train.* and data.* keys applied over the preset
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.steps=100`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for both data generation and training (replaces data.seed and train.seed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the reproducibility manifest [default: next to the main output]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it as a bundle file
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Output bundle file
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train a head on the `train` split and write a checkpoint
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle file to train on [default: synthetic data from the configuration]
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Output checkpoint file
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Line-delimited JSON metrics output
        #[arg(long, value_name = "PATH")]
        metrics: Option<PathBuf>,
        /// Train on this many randomly chosen clips per class
        #[arg(long, value_name = "K")]
        shots: Option<usize>,
    },
    /// Evaluate a checkpoint on one split
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to evaluate
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Bundle file [default: synthetic data from the configuration]
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Split tag to evaluate
        #[arg(long, default_value = "test")]
        split: String,
        /// Temporal views per clip, fused by averaging logits
        #[arg(long, default_value_t = 1)]
        views: usize,
        /// Frames per view [default: every frame]
        #[arg(long, value_name = "N")]
        frames_per_view: Option<usize>,
    },
    /// Evaluate a checkpoint against other class vocabularies
    Zeroshot {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to transfer
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// One bundle file per split; its `test` bundles are used when present
        #[arg(long, value_name = "PATH")]
        data: Vec<PathBuf>,
        /// Keep only these classes, comma separated, renumbered in order
        #[arg(long, value_name = "LIST")]
        classes: Option<String>,
    },
    /// Train and evaluate ablation rows from the same seed
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle file [default: synthetic data from the configuration]
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Comma-separated row names or keys [default: every row]
        #[arg(long, value_name = "LIST")]
        rows: Option<String>,
        /// Plain-text table output
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Line-delimited JSON output
        #[arg(long, value_name = "PATH")]
        metrics: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the training loss
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        /// Largest acceptable relative error
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Print the analytic FLOP breakdown of one forward pass
    Flops {
        #[command(flatten)]
        run: RunArgs,
        /// Frames per clip [default: data.frames]
        #[arg(long, value_name = "T")]
        frames: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    if let Some(n) = std::env::var("VICTR_THREADS").ok().and_then(|v| v.parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
