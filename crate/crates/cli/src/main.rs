//! `epm`: command-line driver. Every command reads one JSON config, runs in
//! process, and writes its outputs plus `manifest.json` to the output
//! directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epm_core::Error;

#[derive(Debug, Parser)]
#[command(name = "epm", version, about = "Entropy-penalized Mather problem on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Effective value, potentials, density and kernels.
    Solve,
    /// Subdominant eigenvalue of the forward kernel.
    Gap,
    /// Stationary trajectory of the forward or backward chain.
    Simulate,
    /// Exact and empirical correlations with a decay fit.
    Correlate {
        /// Reuse a binary trajectory instead of simulating one.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Action, entropy and penalized objective of the solved measure.
    Objective,
    /// Solve a list of (epsilon, h) pairs.
    Sweep,
    /// Assembled forward operator with mean Lagrangians.
    KernelDump,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Gap => "gap",
            Command::Simulate => "simulate",
            Command::Correlate { .. } => "correlate",
            Command::Objective => "objective",
            Command::Sweep => "sweep",
            Command::KernelDump => "kernel-dump",
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Domain(_)
        | Error::Shape { .. }
        | Error::Usage(_)
        | Error::Config { .. }
        | Error::InsufficientData { .. }
        | Error::Io(_) => 1,
        Error::LinearOverflow { .. }
        | Error::NonConvergence { .. }
        | Error::Underflow { .. }
        | Error::Numeric(_)
        | Error::Reducible(_) => 2,
        Error::Internal(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let Some(path) = cli.config.as_ref() else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(1);
    };
    let mut cfg = match config::RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    match commands::run(&cli.command, &cfg) {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
