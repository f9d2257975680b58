mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gwpd::GwpdError;

/// Gaussian wavepacket dynamics driver.
#[derive(Debug, Parser)]
#[command(name = "gwpd", version, about)]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Propagate one wavepacket; writes trajectory.csv and summary.json.
    Run(RunArgs),
    /// Repeat a run at several time steps and fit the error slope; writes convergence.csv.
    Converge {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated time steps, e.g. "0.02,0.01,0.005".
        #[arg(long)]
        dt_list: Option<String>,
    },
    /// Forward run followed by the exact adjoint steps back; writes summary.json with the residual.
    Reverse(RunArgs),
    /// Compare a Gaussian run with the split-operator grid solution; writes fidelity.csv.
    CompareGrid(RunArgs),
    /// List method ids, or print effective-potential coefficients along a trajectory.
    ListMethods {
        /// Print t, V0, V1, V2 for every row of --input (needs --config).
        #[arg(long)]
        emit_coeffs: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// trajectory.csv produced by `run`.
        #[arg(long = "input", alias = "in")]
        input: Option<PathBuf>,
        /// Write coeffs.csv into this directory instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.directory from the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const IO: u8 = 1;

    pub fn config(message: String) -> Self {
        Self { code: Self::CONFIG, message }
    }

    pub fn numerical(message: String) -> Self {
        Self { code: Self::NUMERICAL, message }
    }

    pub fn io(message: String) -> Self {
        Self { code: Self::IO, message }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GwpdError> for Failure {
    fn from(e: GwpdError) -> Self {
        match e {
            GwpdError::Numerical { .. }
            | GwpdError::BranchCrossing { .. }
            | GwpdError::BoundaryLeak { .. }
            | GwpdError::Singular(_) => Self::numerical(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("GWPD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::config(format!("GWPD_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("cannot configure thread pool: {e}")))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let quiet = cli.quiet;
    match cli.command {
        Command::Run(a) => commands::run(&a.config, a.output.as_deref(), quiet, false),
        Command::Reverse(a) => commands::run(&a.config, a.output.as_deref(), quiet, true),
        Command::Converge { run, dt_list } => {
            commands::converge(&run.config, run.output.as_deref(), dt_list.as_deref(), quiet)
        }
        Command::CompareGrid(a) => commands::compare_grid(&a.config, a.output.as_deref(), quiet),
        Command::ListMethods { emit_coeffs, config, input, output } => {
            if emit_coeffs {
                let config = config.ok_or_else(|| Failure::config("--emit-coeffs needs --config".into()))?;
                let input = input.ok_or_else(|| Failure::config("--emit-coeffs needs --input".into()))?;
                commands::emit_coeffs(&config, &input, output.as_deref())
            } else {
                commands::list_methods();
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gwpd: error: {f}");
            ExitCode::from(f.code)
        }
    }
}
