//! `driftbandit` — configuration-driven runner for non-stationary bandit
//! experiments: generate synthetic instances, sweep policies over horizon
//! grids with seeded replications, and fit regret-growth slopes.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_generate, cmd_run, cmd_slope, CliError};
use config::ExperimentConfig;

/// Environment variable overriding the config's base seed (flags still win).
const SEED_VAR: &str = "DRIFTBANDIT_SEED";

#[derive(Parser)]
#[command(name = "driftbandit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured environments to path/actions CSV files
    Generate {
        /// Experiment configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the environment's generator seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the policy/environment sweep and write report CSVs
    Run {
        /// Experiment configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the base seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the replication count
        #[arg(long)]
        reps: Option<usize>,
        /// Bound on parallel replications
        #[arg(long)]
        jobs: Option<usize>,
        /// Emit trace rows every this many rounds
        #[arg(long)]
        trace_every: Option<usize>,
    },
    /// Fit log-log regret-growth slopes from a summary file
    Slope {
        /// A summary.csv produced by `run`
        #[arg(long)]
        summary: PathBuf,
        /// Only fit this policy
        #[arg(long)]
        policy: Option<String>,
        /// Also write the fits to this CSV file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::parse(&text).map_err(CliError::Config)?;
    if let Ok(value) = std::env::var(SEED_VAR) {
        config.base_seed = value
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_VAR} must be an unsigned integer")))?;
    }
    Ok(config)
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Generate { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.environment.set_seed(seed);
            }
            cmd_generate(&cfg)
        }
        Command::Run {
            config,
            out,
            seed,
            reps,
            jobs,
            trace_every,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.base_seed = seed;
            }
            if let Some(reps) = reps {
                cfg.replications = reps;
            }
            if let Some(jobs) = jobs {
                cfg.jobs = Some(jobs);
            }
            if let Some(k) = trace_every {
                cfg.trace_every = Some(k);
            }
            cfg.validate().map_err(CliError::Config)?;
            cmd_run(&cfg)
        }
        Command::Slope {
            summary,
            policy,
            out,
        } => cmd_slope(&summary, policy.as_deref(), out.as_ref()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
