use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::CliError;

/// Identify low-dimensional linear systems from high-dimensional observations.
#[derive(Parser, Debug)]
#[command(name = "hdsysid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file; stdout when omitted (where applicable).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fixed observer rank instead of the eigengap rule.
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Ho-Kalman confidence parameter [default: 0.05].
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Worker threads [default: available cores]; SYSID_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories of a system.
    Simulate,
    /// Estimate the observer column space of one trajectory.
    ColApprox,
    /// Identify a system from one trajectory with Ho-Kalman.
    HoKalman,
    /// Column space from trajectory 1, system from projected trajectory 2.
    ColAdapted,
    /// Leave-one-out identification of systems sharing an observer column space.
    Meta,
    /// Run a simulation sweep and write its CSV.
    Experiment,
    /// Generate the hard-instance family for lower-bound experiments.
    HardFamily,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("SYSID_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| {
            CliError::validation("threads", format!("SYSID_THREADS must be a non-negative integer, got {v:?}"))
        }),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.common.threads)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.filter(|&n| n > 0) {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::validation("threads", e.to_string()))?;
    let common = cli.common;
    pool.install(|| match cli.command {
        Command::Simulate => commands::simulate(&common),
        Command::ColApprox => commands::col_approx(&common),
        Command::HoKalman => commands::ho_kalman(&common),
        Command::ColAdapted => commands::col_adapted(&common),
        Command::Meta => commands::meta(&common),
        Command::Experiment => commands::experiment(&common),
        Command::HardFamily => commands::hard_family(&common),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
