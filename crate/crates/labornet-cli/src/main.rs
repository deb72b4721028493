//! `labornet` — pipeline driver for the labor-market network toolkit.
//!
//! Subcommands mirror the pipeline stages: `cluster` infers worker types
//! and markets from a match network, `solve` computes the equilibrium of a
//! parameter bundle, `estimate` fits supply parameters from a worker
//! panel, `simulate` draws synthetic panels, `shock` runs demand-shock
//! experiments, `sweep` maps misclassification surfaces, and `analyze`
//! produces the reduced-form metric tables.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical non-convergence.
//! Set `LABORNET_LOG` to `quiet` or `debug` to adjust verbosity.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::load_config;

#[derive(Parser)]
#[command(name = "labornet", version, about = "Labor-market network analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override; replaces the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Thread cap for all internal parallelism; defaults to available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Infer worker types and markets from an edge-list CSV.
    Cluster,
    /// Solve the general equilibrium of a parameter bundle.
    Solve,
    /// Fit labor-supply parameters from a worker panel.
    Estimate,
    /// Simulate a synthetic worker panel.
    Simulate,
    /// Run sectoral demand-shock experiments.
    Shock,
    /// Map the misclassification sweep surfaces for a shock.
    Sweep,
    /// Produce the reduced-form metric tables for panels.
    Analyze,
}

fn verbosity() -> u8 {
    match std::env::var("LABORNET_LOG").as_deref() {
        Ok("quiet") | Ok("error") | Ok("off") => 0,
        Ok("debug") | Ok("trace") => 2,
        _ => 1,
    }
}

pub fn log_info(msg: &str) {
    if verbosity() >= 1 {
        eprintln!("labornet: {msg}");
    }
}

pub fn log_debug(msg: &str) {
    if verbosity() >= 2 {
        eprintln!("labornet[debug]: {msg}");
    }
}

fn run(cli: &Cli) -> anyhow::Result<i32> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Cluster => {
            let mut config: config::ClusterConfig = load_config(config_path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            commands::cmd_cluster(&config, out)
        }
        Command::Solve => {
            let config: config::SolveConfig = load_config(config_path)?;
            commands::cmd_solve(&config, out)
        }
        Command::Estimate => {
            let mut config: config::EstimateConfig = load_config(config_path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            commands::cmd_estimate(&config, out)
        }
        Command::Simulate => {
            let mut config: config::SimulateConfig = load_config(config_path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            commands::cmd_simulate(&config, out)
        }
        Command::Shock => {
            let mut config: config::ShockConfig = load_config(config_path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            commands::cmd_shock(&config, out)
        }
        Command::Sweep => {
            let mut config: config::SweepConfig = load_config(config_path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            commands::cmd_sweep(&config, out)
        }
        Command::Analyze => {
            let mut config: config::AnalyzeConfig = load_config(config_path)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            commands::cmd_analyze(&config, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("labornet: error: {err:#}");
            ExitCode::from(1)
        }
    }
}
