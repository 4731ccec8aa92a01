mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Text-guided pneumothorax segmentation on synthetic radiographs.
#[derive(Parser, Debug)]
#[command(name = "ctxnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config; an empty file means all defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted `key=value` override applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Sets the data, training and init seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Mask threshold on sigmoid probabilities.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Parallel training jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Dataset directory written by gen-data; generated from the config otherwise.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train one fold (or all folds with --cv).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        cv: bool,
    },
    /// Score a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding model.ckpt and model.json.
        #[arg(long)]
        model: PathBuf,
        /// Score only this fold's test split instead of every sample.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Cross-validate every ablation arm on shared folds.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Re-predict with words swapped in each report.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// `from:to`, repeatable; defaults to left and right exchanged.
        #[arg(long = "swap", value_name = "FROM:TO")]
        swaps: Vec<String>,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Dump attention maps for one sample and a word-swapped report.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Sample id; the first positive sample otherwise.
        #[arg(long)]
        id: Option<String>,
        #[arg(long = "swap", value_name = "FROM:TO")]
        swaps: Vec<String>,
    },
    /// Segment one image given its report.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        report: String,
        /// Ground-truth mask PGM; prints the Dice when given.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
