//! Command-line front end: configuration parsing, subcommand dispatch, and
//! CSV/JSON/SVG emission.
//!
//! Exit status is 0 on success, 2 when a study's reliability flags fire, and
//! 1 on any error. `GP_LEAPFROG_WORKERS` sets the worker thread count.

mod config;
mod plot;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser};

pub use config::{parse_config, parse_config_str, RunConfig, DEFAULT_DT, DEFAULT_OUTPUT_DIR, DEFAULT_RESOLUTION};
pub use plot::{read_columns, render, Series};
pub use run::{run, run_dir, RunOutcome, Subcommand, EXIT_UNRELIABLE};

use crate::error::{Error, Result};

pub const WORKERS_ENV: &str = "GP_LEAPFROG_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "gp-leapfrog", version, about = "Leapfrog integration and convergence studies on Gaussian-process potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Draw one realization; write its values and gradients on the probe grid.
    Sample(RunArgs),
    /// Integrate one realization with the parameterized scheme.
    Integrate(RunArgs),
    /// RMS local truncation error versus step size.
    LocalOrder(RunArgs),
    /// One-step gap between the scheme and its modified equation.
    ModifiedMatch(RunArgs),
    /// Remainder of the truncated Taylor series of the exact flow.
    TaylorOrder(RunArgs),
    /// RMS endpoint error at the horizon versus step size.
    GlobalOrder(RunArgs),
    /// Expected suprema of squared derivative norms over the probe box.
    Moments(RunArgs),
    /// Survival of the supremum of the first partial derivative.
    Tails(RunArgs),
    /// Energy deviation of the standard leapfrog.
    EnergyDrift(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file. Every key has a default.
    #[arg(short, long, conflicts_with = "inline")]
    config: Option<PathBuf>,
    /// Configuration given as TOML text.
    #[arg(long)]
    inline: Option<String>,
    /// Overrides `run.output_dir`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Writes an SVG plot (sets `run.plot`).
    #[arg(long)]
    plot: bool,
}

impl Command {
    fn split(self) -> (Subcommand, RunArgs) {
        match self {
            Command::Sample(a) => (Subcommand::Sample, a),
            Command::Integrate(a) => (Subcommand::Integrate, a),
            Command::LocalOrder(a) => (Subcommand::LocalOrder, a),
            Command::ModifiedMatch(a) => (Subcommand::ModifiedMatch, a),
            Command::TaylorOrder(a) => (Subcommand::TaylorOrder, a),
            Command::GlobalOrder(a) => (Subcommand::GlobalOrder, a),
            Command::Moments(a) => (Subcommand::Moments, a),
            Command::Tails(a) => (Subcommand::Tails, a),
            Command::EnergyDrift(a) => (Subcommand::EnergyDrift, a),
        }
    }
}

fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(WORKERS_ENV, "a positive integer")),
        },
    }
}

fn execute(sub: Subcommand, args: RunArgs) -> Result<RunOutcome> {
    let mut cfg = match (&args.config, &args.inline) {
        (Some(path), _) => parse_config(path)?,
        (None, Some(text)) => parse_config_str(text)?,
        (None, None) => parse_config_str("")?,
    };
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
        cfg.defaulted.retain(|k| k != "run.output_dir");
    }
    if args.plot {
        cfg.plot = true;
        cfg.defaulted.retain(|k| k != "run.plot");
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| run(sub, &cfg))
}

/// Parses arguments, runs the subcommand, and returns the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (sub, args) = cli.command.split();
    match execute(sub, args) {
        Ok(outcome) => {
            for w in outcome.summary["warnings"].as_array().into_iter().flatten() {
                eprintln!("warning: {}", w.as_str().unwrap_or_default());
            }
            for v in outcome.summary["acceptance"].as_array().into_iter().flatten() {
                let check = v["check"].as_str().unwrap_or("check");
                let pass = v["pass"].as_bool().unwrap_or(false);
                println!("{check}: {}", if pass { "pass" } else { "fail" });
            }
            if outcome.exit_code == EXIT_UNRELIABLE {
                for r in outcome.summary["reliability"]["reasons"].as_array().into_iter().flatten() {
                    eprintln!("unreliable: {}", r.as_str().unwrap_or_default());
                }
            }
            println!("{}", outcome.dir.display());
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
