//! `angleforge`: generate data, train, evaluate, verify gradients and compare
//! runs. Exit codes: 0 success, 1 verification failure, 2 configuration or
//! usage error, 3 numeric failure.

mod artifacts;
mod commands;
mod compare;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
#[error("verification failed: {0}")]
pub struct VerificationFailed(pub String);

#[derive(Debug, thiserror::Error)]
#[error("worker for {config} exited with code {code}")]
pub struct WorkerFailed {
    pub code: i32,
    pub config: String,
}

#[derive(Parser, Debug)]
#[command(
    name = "angleforge",
    version,
    about = "Angular triplet and adversarial camera experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a dataset as a CSV manifest plus summary statistics.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Synthetic preset name instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate one or more experiment configs.
    Train {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write query and gallery embeddings as CSV.
        #[arg(long)]
        dump_embeddings: bool,
        /// Worker processes for multi-config sweeps.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a saved extractor checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Tabulate finished runs, or measure the angular spread of one dump.
    Compare {
        runs: Vec<PathBuf>,
        /// Write the CSV here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report within-class and between-centroid angles of an embeddings CSV.
        #[arg(long, conflicts_with = "runs")]
        spread: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenData {
            config,
            preset,
            out,
            seed,
        } => {
            let dir = commands::gen_data(commands::GenDataArgs {
                config: config.as_deref(),
                preset: preset.as_deref(),
                out: out.as_deref(),
                seed,
            })?;
            println!("{}", dir.display());
        }
        Cmd::Train {
            config,
            out,
            seed,
            dump_embeddings,
            jobs,
        } => commands::train(commands::TrainArgs {
            configs: &config,
            out: out.as_deref(),
            seed,
            dump_embeddings,
            jobs,
        })?,
        Cmd::Eval {
            config,
            checkpoint,
            out,
            seed,
            dump_embeddings,
        } => {
            commands::eval(&config, &checkpoint, out.as_deref(), seed, dump_embeddings)?;
        }
        Cmd::Gradcheck { seeds } => commands::gradcheck(seeds)?,
        Cmd::Compare { runs, out, spread } => {
            let text = match spread {
                Some(path) => {
                    let batch =
                        angleforge::eval::parse_embeddings(&std::fs::read_to_string(&path)?)?;
                    serde_json::to_string_pretty(&angleforge::eval::angular_spread(&batch)?)? + "\n"
                }
                None => compare::compare_runs(&runs)?,
            };
            print!("{text}");
            if let Some(o) = out {
                artifacts::write_atomic(&o, text.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(w) = err.downcast_ref::<WorkerFailed>() {
        return u8::try_from(w.code).unwrap_or(2);
    }
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 1;
    }
    let numeric = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<angleforge::Error>(),
            Some(angleforge::Error::NonFinite { .. })
        )
    });
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ANGLEFORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
