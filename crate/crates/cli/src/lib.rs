//! Batch front end for the `obspanel` library: simulate panels, run
//! estimators, run design diagnostics, and reproduce the estimator
//! comparison table, all driven by JSON configs with flag overrides.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 computation
//! error, 3 diagnostics or suite assertions failed.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::CliError;

#[derive(Parser)]
#[command(name = "obspanel", version, about = "Causal inference over observational panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Draw a synthetic study: panel.csv, baseline.csv, edges.csv (for
    /// spillover designs), truth.json, config.json.
    Simulate {
        /// Simulation config JSON (mutually exclusive with --preset).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Name of a shipped scenario, e.g. contemporaneous_invariant.
        #[arg(long)]
        preset: Option<String>,
        /// Overrides the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads (0 or absent: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the configured estimators; writes results.csv, report.md,
    /// run_meta.json. Exits 2 only when every estimator fails.
    Estimate {
        /// Run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Recorded in run_meta.json.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run design diagnostics; writes diagnostics.csv (and balance.csv).
    /// Exits 3 when any check fails.
    Diagnose {
        /// Run config JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo comparison of estimators across scenarios; writes
    /// table1.csv and table1.md. Exits 3 when a suite assertion fails.
    Benchmark {
        /// Suite JSON; the shipped default suite when absent.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Overrides the suite's replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides the suite's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Parses and runs, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate { config, preset, seed, out, threads } => {
            commands::cmd_simulate(config, preset, seed, out, threads)
        }
        Command::Estimate { config, out, threads, seed } => {
            commands::cmd_estimate(&config, out, threads, seed)
        }
        Command::Diagnose { config, out, threads, seed } => {
            commands::cmd_diagnose(&config, out, threads, seed)
        }
        Command::Benchmark { suite, reps, seed, out, threads } => {
            commands::cmd_benchmark(suite, reps, seed, out, threads)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
