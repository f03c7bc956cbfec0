use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgvi::runner::{describe, run_convergence, run_mc, run_single, validate_config};
use sgvi::Error;

/// Stochastic Galerkin solver for obstacle problems with random data.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every level of the schedule and write table.csv.
    Converge { config: PathBuf },
    /// Solve one level and write its statistics.
    Solve {
        config: PathBuf,
        /// Zero-based index into the schedule.
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Monte Carlo reference on the mesh of one level.
    Mc {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Print the resolved problem and levels.
    Info { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged { .. } | Error::TooManySkipped { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> sgvi::Result<()> {
    match cli.command {
        Command::Converge { config } => {
            let cfg = validate_config(&config)?;
            let table = run_convergence(&cfg)?;
            print!("{}", table.to_csv());
        }
        Command::Solve { config, level } => {
            let cfg = validate_config(&config)?;
            let report = run_single(&cfg, level)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Mc { config, level } => {
            let cfg = validate_config(&config)?;
            let report = run_mc(&cfg, level)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Info { config } => {
            let cfg = validate_config(&config)?;
            print!("{}", describe(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match threads {
        Some(t) => sgvi::par::with_threads(t, || run(cli)),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
