//! `camid`: curate, split, train, predict, evaluate and ablate from one binary.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when curation keeps nothing.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Precision;

#[derive(Debug, Parser)]
#[command(name = "camid", version, about = "Camera-model identification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data preparation and inference (1 = bit-reproducible)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Floating-point precision for training and inference
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Print the effective configuration as TOML and exit
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a class-per-directory corpus into a manifest
    Curate {
        /// Corpus root with one subdirectory per class
        #[arg(long)]
        root: PathBuf,
        /// Output manifest (JSON lines)
        #[arg(long)]
        out: PathBuf,
        /// Optional per-file decision report (TSV)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Assign train/validation splits
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Validation records per class (overrides the config)
        #[arg(long)]
        val_per_class: Option<usize>,
    },
    /// Build a half-altered evaluation set from a manifest's validation split
    BuildEval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory receiving the evaluation PNGs
        #[arg(long)]
        out_dir: PathBuf,
        /// Output manifest of the evaluation set
        #[arg(long)]
        out: PathBuf,
        /// Center-crop side (overrides the config)
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Train a model on a manifest's train split
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Receives model.cmid, loss.csv and periodic checkpoints
        #[arg(long)]
        out_dir: PathBuf,
        /// Iteration budget (overrides the config)
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Write TTA predictions for every record of a manifest
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output predictions CSV
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitFilter::All)]
        split: SplitFilter,
    },
    /// Print weighted and plain accuracy of a checkpoint on a manifest
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitFilter::All)]
        split: SplitFilter,
        /// Also report the score with the extra 1/n prefactor
        #[arg(long)]
        literal: bool,
    },
    /// Robustness, crop-size or train-size sweeps
    Ablate {
        #[command(subcommand)]
        kind: AblateKind,
    },
    /// Finite-difference check of every differentiable operation
    Gradcheck {
        /// Number of random seeds, starting at --seed
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Write the synthetic camera-trace corpus and its manifest
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Output manifest, with train/val splits assigned
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AblateKind {
    /// Apply one manipulation per grid value to the validation images
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// gamma, jpeg, scale, contrast or crop_size
        #[arg(long)]
        transform: String,
        /// Comma-separated grid; defaults to the transform's built-in grid
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Output sweep CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per train-set size and evaluate each
    TrainSize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitFilter {
    All,
    Train,
    Val,
    Eval,
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
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
