//! `dmhe`: data-driven moving horizon estimation experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmhe_cli::commands::{
    cmd_analyze, cmd_estimate, cmd_generate_data, cmd_reproduce_example, resolve_seeds, CliError,
};
use dmhe_cli::config::{ExperimentConfig, ValidatedConfig};

#[derive(Parser)]
#[command(name = "dmhe", version, about = "Data-driven moving horizon estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a persistently exciting offline dataset and write it as CSV.
    GenerateData {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the estimator on fresh noisy simulations against a dataset file.
    Estimate {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Offline dataset CSV produced by generate-data.
        dataset: PathBuf,
        /// Run a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sweep this many consecutive seeds.
        #[arg(long)]
        seeds: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write one SVG figure per run.
        #[arg(long)]
        svg: bool,
    },
    /// Rerun the published benchmark grid; writes run CSVs, figures, and a
    /// comparison table.
    ReproduceExample {
        /// Base seed (default 1).
        #[arg(long)]
        seed: Option<u64>,
        /// Sweep this many consecutive seeds.
        #[arg(long)]
        seeds: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute stability constants and check run files against the bound.
    Analyze {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run CSV files produced by estimate or reproduce-example.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<ValidatedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(ExperimentConfig::from_json(&text)?.validate()?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData { config, seed, out } => {
            let cfg = load_config(&config)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            cmd_generate_data(&cfg, seed, &out)?;
        }
        Command::Estimate { config, dataset, seed, seeds, out, svg } => {
            let cfg = load_config(&config)?;
            let seed_list = resolve_seeds(&cfg.seeds, seed, seeds);
            cmd_estimate(&cfg, &dataset, &seed_list, &out, svg)?;
        }
        Command::ReproduceExample { seed, seeds, out } => {
            let seed_list = resolve_seeds(&[1], seed, seeds);
            cmd_reproduce_example(&seed_list, &out)?;
        }
        Command::Analyze { config, runs } => {
            let cfg = load_config(&config)?;
            cmd_analyze(&cfg, &runs)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
