use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod check;
mod commands;

/// Finite element experiments for the stochastic Cahn–Hilliard equation.
#[derive(Debug, Parser)]
#[command(name = "schfem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named preset: test1, test2 or test3
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Master seed; overrides the configuration
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of Monte Carlo paths; overrides the configuration
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Print only failures and errors
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify operator identities and sign structure on the configured mesh
    Check,
    /// Evolve a single path and write the initial and final fields
    Evolve {
        /// Path index of the noise stream
        #[arg(long, default_value_t = 0)]
        path: u64,
    },
    /// Monte Carlo norm statistics, snapshots and zero-level sets
    Stability,
    /// Common-noise spatial convergence table
    Converge,
    /// Mean-square increment scaling against the time lag
    Holder,
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    InvariantFailure = 1,
    ConfigError = 2,
    SolverFailure = 3,
}

fn status_of(err: &anyhow::Error) -> Status {
    match err.downcast_ref::<schfem::Error>() {
        Some(e) if e.is_solver_failure() => Status::SolverFailure,
        _ => Status::ConfigError,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check => check::run(&cli.common),
        Command::Evolve { path } => commands::evolve(&cli.common, path),
        Command::Stability => commands::stability(&cli.common),
        Command::Converge => commands::converge(&cli.common),
        Command::Holder => commands::holder(&cli.common),
    };
    let status = match result {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            status_of(&e)
        }
    };
    ExitCode::from(status as u8)
}
