//! Experiment harness around the `robustvi` workflow.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{EXIT_ERROR, EXIT_OK, EXIT_WARNED};

#[derive(Debug, Parser)]
#[command(name = "robustvi", version, about = "Robust stochastic optimization for variational inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides workflow.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the workflow once and write trace.csv, elbo.csv, report.json and table.csv.
    Run(RunArgs),
    /// Run the ΔELBO and MCSE stopping rules on the same seeds and tabulate both.
    Compare(RunArgs),
    /// Recompute diagnostics from a persisted trace and print a verdict.
    Diagnose {
        #[arg(long)]
        trace: PathBuf,
        /// Iterates per chain to analyse, counted from the end (default: all, rounded down to even).
        #[arg(long)]
        window: Option<usize>,
        /// Configuration whose workflow.rhat_cutoff is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.1)]
        rhat_cutoff: f64,
    },
}

/// Caps the global worker pool at `ROBUSTVI_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ROBUSTVI_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("ROBUSTVI_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            anyhow::bail!("ROBUSTVI_THREADS must be a positive integer, got '{v}'");
        }
        // a second initialisation in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    init_threads()?;
    match cli.command {
        Command::Run(args) => {
            let cfg = config::load(&args.config)?;
            commands::cmd_run(&cfg, args.seed, args.out.as_deref())
        }
        Command::Compare(args) => {
            let cfg = config::load(&args.config)?;
            commands::cmd_compare(&cfg, args.seed, args.out.as_deref())
        }
        Command::Diagnose { trace, window, config, rhat_cutoff } => {
            let cutoff = match config {
                Some(path) => config::load(&path)?.workflow.rhat_cutoff,
                None => rhat_cutoff,
            };
            commands::cmd_diagnose(&trace, window, cutoff)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
