//! `satr`: train, cross-validate, and run the dual-head kinematic
//! skill/task classifier from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "satr",
    about = "Dual-head CNN+GRU classifier for multi-channel kinematic trials",
    version
)]
struct Cli {
    /// Override the seed from the config file (defaults to 42).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus (kinematics files + manifest).
    Synth {
        /// Synthetic-spec file; omitted means the built-in default corpus.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for trials/ and manifest.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once on an 80/20 trial-grouped split; write checkpoint + log.
    Train {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Epoch count override.
        #[arg(long)]
        epochs: Option<usize>,
        /// Mini-batch size override.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Five-fold leave-one-supertrial-out cross-validation with reports.
    Crossval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Stream per-window predictions and a trial verdict for kinematics
    /// files.
    Predict {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// A kinematics file, or a directory of .txt trials.
        input: PathBuf,
    },
    /// Re-render the text artifacts from a machine-readable report.
    Report {
        /// A .report.json file written by `crossval`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn effective_config(
    config_path: Option<&PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<RunConfig> {
    let mut config = match config_path {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.out = out;
    }
    if let Some(epochs) = epochs {
        config.schedule.epochs = epochs;
    }
    if let Some(batch_size) = batch_size {
        config.schedule.batch_size = batch_size;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { spec, out } => {
            commands::cmd_synth(spec.as_deref(), &out, cli.seed.unwrap_or(42))
        }
        Command::Train { config, out, epochs, batch_size } => {
            let config = effective_config(config.as_ref(), out, epochs, batch_size, cli.seed)?;
            commands::cmd_train(&config)
        }
        Command::Crossval { config, out, epochs, batch_size } => {
            let config = effective_config(config.as_ref(), out, epochs, batch_size, cli.seed)?;
            commands::cmd_crossval(&config)
        }
        Command::Predict { checkpoint, input } => commands::cmd_predict(&checkpoint, &input),
        Command::Report { report, out } => commands::cmd_report(&report, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code_for(&err))
        }
    }
}
