//! `divrl`: reference builds, simulation, policy-evaluation sweeps and policy
//! iteration for the exploratory dividend problem.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Preset};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "divrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named preset used when no configuration file is given.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Parallel sweep cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Classical and exploratory reference solutions with the envelope report.
    Reference,
    /// Trajectories and Monte Carlo costs of a reference policy.
    Simulate,
    /// Policy-evaluation sweep over (dt, family, x0).
    Evaluate,
    /// Evaluate/improve iterations from the uniform policy.
    ImproveLoop,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Reference => "reference",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::ImproveLoop => "improve-loop",
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(cli.preset.unwrap_or(Preset::Desk)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("divrl: {e}");
            return e.to_exit();
        }
    };
    log::info!("{} with {}", cli.command.name(), cfg.header());
    let result = match cli.command {
        Command::Reference => commands::reference(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::ImproveLoop => commands::improve_loop_cmd(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("divrl {}: {e}", cli.command.name());
            commands::write_error_report(&cfg, cli.command.name(), &e);
            e.to_exit()
        }
    }
}
