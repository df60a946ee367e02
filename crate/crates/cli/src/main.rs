//! `fiap`: run replica campaigns and verification suites from a config file.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Globals, RateArgs, Verdict};

#[derive(Parser)]
#[command(name = "fiap", version, about = "Fragmentation-interaction-aggregation network experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "FIAP_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = "FIAP_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo campaign and write archives.
    Simulate,
    /// Arrival limit, PAI, TLLN and independence checks over an M sweep.
    VerifyPh,
    /// Solve the counting-model rate equation.
    SolveRate {
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Grid step for --ode.
        #[arg(long)]
        grid: Option<f64>,
        /// Also integrate the PGF equation and report |G(1) - 1|.
        #[arg(long)]
        ode: bool,
    },
    /// Partitioned vector-state arrivals against the multivariate PGF.
    VectorPh,
    /// Print the built-in model families.
    ListInstances,
    /// Check a config without running it.
    Validate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if cli.workers == Some(0) {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    if let Some(w) = cli.workers {
        // Only the vector sampler uses the global pool; the replica engine
        // gets the budget explicitly.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Simulate => commands::simulate(&globals),
        Command::VerifyPh => commands::verify_ph(&globals),
        Command::SolveRate { b, mu, k, grid, ode } => {
            commands::solve_rate(&globals, &RateArgs { b, mu, k, grid, ode })
        }
        Command::VectorPh => commands::vector_ph(&globals),
        Command::ListInstances => commands::list_instances(),
        Command::Validate => commands::validate(&globals),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => {
            eprintln!("verdict: FAIL");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
