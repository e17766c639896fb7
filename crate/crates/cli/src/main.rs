//! `mmal`: generate synthetic data, run active-learning suites, compare
//! strategies and inspect per-sample modality attributions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmal::model::Fusion;
use mmal::strategies::Strategy;

use config::Overrides;

#[derive(Parser)]
#[command(name = "mmal", version, about = "Balanced multimodal active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, env = "MMAL_OUT_DIR", default_value = "mmal-out")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (`dataset.csv` plus `.meta`).
    Generate {
        /// TOML experiment file; only its `[dataset]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every configured strategy and write metrics, selection logs and checkpoints.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Strategies to run, comma separated (random, entropy, coreset, badge, bmmal).
        #[arg(long, value_delimiter = ',')]
        strategy: Option<Vec<Strategy>>,
        /// Samples queried per round.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Number of sub-pools per query; must divide the budget.
        #[arg(long)]
        split: Option<usize>,
        /// concat or sum.
        #[arg(long)]
        fusion: Option<Fusion>,
        /// Repetitions per strategy.
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Build pairwise win matrices from one or more metrics files.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write per-sample Shapley attributions for a checkpoint on a dataset.
    Attribute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            config,
            seed,
            common,
        } => commands::generate(config.as_deref(), seed, common.out, common.force),
        Command::Run {
            config,
            seed,
            strategy,
            budget,
            rounds,
            split,
            fusion,
            reps,
            common,
        } => {
            let overrides = Overrides {
                seed,
                strategies: strategy,
                budget,
                rounds,
                split,
                fusion,
                reps,
            };
            commands::run(config.as_deref(), &overrides, common.out, common.force)
        }
        Command::Compare { metrics, common } => {
            commands::compare(&metrics, common.out, common.force)
        }
        Command::Attribute {
            checkpoint,
            dataset,
            common,
        } => commands::attribute_cmd(&checkpoint, &dataset, common.out, common.force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
