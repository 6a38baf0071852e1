//! `heston-hjb`: configuration-driven driver for solving the reduced HJB
//! equation, simulating policies and comparing them.
//!
//! Exit codes: `0` success, `1` configuration error, `2` numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{Resolution, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "heston-hjb",
    version,
    about = "Feedback control synthesis for a controlled Heston model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `grid.nx`, `grid.ny` and `scheme.n_time_steps`.
    #[arg(long, global = true, value_name = "NX,NY,N")]
    resolution: Option<Resolution>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Check model hypotheses and every section present in the config.
    Validate,
    /// Solve the backward equation; writes `field.csv` and `diagnostics.json`.
    Solve,
    /// Simulate the first policy; writes `summary.json` and optionally `paths.csv`.
    Simulate,
    /// Compare all policies on common random numbers; writes `comparison.csv`.
    Compare,
    /// Grid and time-step refinement study; writes `convergence.csv`.
    Convergence,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Convergence => "convergence",
        }
    }
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut config = RunConfig::load(path)?;
    config.apply_overrides(cli.seed, cli.resolution)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok(Context {
        config,
        base_dir: commands::resolve_base_dir(path),
        out_dir,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = SystemTime::now();
    let ctx = match context(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Err(e) = ctx.prepare_output() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    let outcome = match cli.command {
        Command::Validate => commands::validate_cmd(&ctx),
        Command::Solve => commands::solve_cmd(&ctx),
        Command::Simulate => commands::simulate_cmd(&ctx, ctx.config.output.write_paths),
        Command::Compare => commands::compare_cmd(&ctx),
        Command::Convergence => commands::convergence_cmd(&ctx),
    };
    if let Err(e) = commands::write_run_log(&ctx, cli.command.name(), started, &outcome) {
        eprintln!("warning: could not write run.log: {e}");
    }
    match outcome {
        Ok(o) => {
            for n in &o.notes {
                eprintln!("{n}");
            }
            for f in &o.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
