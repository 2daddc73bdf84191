//! `fvin`: simulate, train, predict, plan and audit from a TOML config.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fvin::Exec;

use crate::commands::Session;
use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fvin", version, about = "Forced variational integrator network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample trajectories and write them as JSON Lines.
    Simulate,
    /// Train a model on the configured dataset.
    Train,
    /// Open-loop prediction errors, energies and the damping sweep.
    Predict,
    /// MPC over a grid of initial conditions.
    Mpc,
    /// Energy-versus-time curves.
    EnergyAudit,
    /// Random data, then noisy-MPC collection rounds with retraining.
    TrainWithMpc,
}

#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let session = Session { cfg, checkpoint: cli.checkpoint.clone(), exec };
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&session),
        Command::Train => commands::train_cmd(&session),
        Command::Predict => commands::predict_cmd(&session),
        Command::Mpc => commands::mpc_cmd(&session),
        Command::EnergyAudit => commands::energy_audit_cmd(&session),
        Command::TrainWithMpc => commands::train_with_mpc_cmd(&session),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
