//! Command-line harness: train, calibrate, evaluate, and reproduce the
//! benchmark experiments and their ablation sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "conformal-kan",
    version,
    about = "Conformalized uncertainty quantification for KAN ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and write its checkpoint and loss histories
    Train {
        /// Experiment id (exp1..exp4)
        #[arg(long)]
        experiment: Option<String>,
        /// Model kind (kan, fbkan, mfkan); defaults per experiment
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Compute a conformal calibration record for a trained ensemble
    Calibrate {
        /// Path to an ensemble manifest written by `train`
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Score a trained, calibrated ensemble on the test split
    Evaluate {
        /// Path to an ensemble manifest written by `train`
        #[arg(long)]
        manifest: PathBuf,
        /// Path to a calibration record written by `calibrate`
        #[arg(long)]
        calibration: PathBuf,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Run a full experiment end to end (all of its model kinds)
    Experiment {
        /// Experiment id (exp1..exp4)
        id: String,
        /// Restrict to one model kind
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Rerun an experiment along an ablation axis
    Sweep {
        /// Axis: ensemble_size, subdomains, or calibration_size
        axis: String,
        /// Comma-separated grid, e.g. "3,6,10,15,20"
        grid: String,
        /// Experiment id the sweep is based on
        #[arg(long)]
        experiment: String,
        /// Model kind; defaults per experiment/axis
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        flags: Overrides,
    },
}

fn thread_flags(command: &Command) -> Option<usize> {
    let flags = match command {
        Command::Train { flags, .. }
        | Command::Calibrate { flags, .. }
        | Command::Evaluate { flags, .. }
        | Command::Experiment { flags, .. }
        | Command::Sweep { flags, .. } => flags,
    };
    flags.threads
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = thread_flags(&cli.command) {
        if threads == 0 {
            eprintln!("error: thread count must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.command {
        Command::Train {
            experiment,
            model,
            flags,
        } => commands::cmd_train(experiment.as_deref(), model.as_deref(), flags),
        Command::Calibrate { manifest, flags } => commands::cmd_calibrate(manifest, flags),
        Command::Evaluate {
            manifest,
            calibration,
            flags,
        } => commands::cmd_evaluate(manifest, calibration, flags),
        Command::Experiment { id, model, flags } => {
            commands::cmd_experiment(id, model.as_deref(), flags)
        }
        Command::Sweep {
            axis,
            grid,
            experiment,
            model,
            flags,
        } => commands::cmd_sweep(axis, grid, experiment, model.as_deref(), flags),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
