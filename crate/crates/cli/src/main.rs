mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Globals;
use config::RunConfig;
use error::CliError;

/// Compress neural networks with the learning-compression algorithm.
#[derive(Debug, Parser)]
#[command(name = "lc", version)]
struct Cli {
    /// Seed for initialization and minibatch order (overrides model.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run the C steps of different tasks one after another.
    #[arg(long, global = true)]
    sequential: bool,
    /// Output directory (overrides the config's "output").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the uncompressed reference model.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compress a reference model as described by the config's tasks.
    Compress {
        #[arg(long)]
        config: PathBuf,
        /// Reference checkpoint (defaults to the config's "reference").
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Report train and test error of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with the IDX files (defaults to $LC_DATA_DIR).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run `compress` for each value of one config field.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted path into the config, e.g. tasks.0.scheme.kappa.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. "1%,5%,10%".
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let g = Globals {
        seed: cli.seed,
        sequential: cli.sequential,
        out: cli.out,
    };
    match cli.command {
        Command::Train { config } => {
            commands::cmd_train(&RunConfig::load(&config)?, &g)?;
        }
        Command::Compress { config, reference } => {
            let cfg = RunConfig::load(&config)?;
            let reference = reference
                .or_else(|| cfg.reference.clone())
                .ok_or_else(|| CliError::Usage("no reference checkpoint: pass --reference".into()))?;
            commands::cmd_compress(&cfg, &reference, &g)?;
        }
        Command::Eval { checkpoint, data } => {
            commands::cmd_eval(&checkpoint, data.as_deref())?;
        }
        Command::Sweep {
            config,
            axis,
            values,
            reference,
        } => {
            commands::cmd_sweep(&RunConfig::load(&config)?, &axis, &values, reference.as_deref(), &g)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
