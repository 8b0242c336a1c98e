//! `cobs`: command-line driver for the coherent observer model.
//!
//! ```text
//! cobs analyze|simulate|filter|oracle --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]
//! ```
//!
//! Each command writes `report.json` plus its CSV artifacts into the output
//! directory and exits with status 0 only if every embedded check passes.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use report::{Check, Outcome};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "COBS_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Steady state, optimal homodyne gain, all-pass and Hurwitz checks.
    Analyze,
    /// Monte Carlo paths of the reduced model against its exact moments.
    Simulate,
    /// Riccati solution, filtering of simulated records and optimality checks.
    Filter,
    /// Fock-space master equation against the linear mean dynamics.
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cobs", version, about = "Coherent qubit observer: analysis, simulation, filtering and oracle checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    #[command(about = "Steady state, optimal homodyne gain, all-pass and Hurwitz checks")]
    Analyze(RunArgs),
    #[command(about = "Monte Carlo paths of the reduced model against its exact moments")]
    Simulate(RunArgs),
    #[command(about = "Riccati solution, filtering of simulated records and optimality checks")]
    Filter(RunArgs),
    #[command(about = "Fock-space master equation against the linear mean dynamics")]
    Oracle(RunArgs),
}

impl CliCommand {
    pub fn split(self) -> (Command, RunArgs) {
        match self {
            CliCommand::Analyze(a) => (Command::Analyze, a),
            CliCommand::Simulate(a) => (Command::Simulate, a),
            CliCommand::Filter(a) => (Command::Filter, a),
            CliCommand::Oracle(a) => (Command::Oracle, a),
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides COBS_OUT_DIR and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed override for `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Run `command` on an already loaded configuration, writing artifacts and
/// `report.json` into `out`.
pub fn execute(command: Command, cfg: &ExperimentConfig, out: &std::path::Path) -> Result<Outcome> {
    std::fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let mut outcome = match command {
        Command::Analyze => commands::analyze(cfg, out),
        Command::Simulate => commands::simulate(cfg, out),
        Command::Filter => commands::filter(cfg, out),
        Command::Oracle => commands::oracle(cfg, out),
    }
    .with_context(|| format!("{} failed", command.name()))?;

    let mut echo = serde_json::to_value(cfg)?;
    if let Some(obj) = echo.as_object_mut() {
        obj.remove("outputs");
    }
    let report_path = out.join("report.json");
    report::write_json(&report_path, &outcome.report(&echo))?;
    outcome.artifacts.insert(0, report_path);
    Ok(outcome)
}

/// Load the config named in `args`, apply overrides and execute.
pub fn run(command: Command, args: &RunArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    let out = commands::resolve_out_dir(args.out.as_deref(), &cfg);
    match args.threads {
        Some(0) => anyhow::bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(|| execute(command, &cfg, &out)),
        None => execute(command, &cfg, &out),
    }
}
