//! Command-line front end of the `zadiff` simulator.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Setup;
use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "zadiff",
    version,
    about = "Heterogeneous zero-attracting diffusion LMS"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for Monte Carlo runs. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// 1000 runs over every N_s in 0..=N.
    #[arg(long, global = true)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Build the network and write its document plus Assumption I checks.
    Generate,
    /// Sweep N_s against rho and plot the MSD family.
    Sweep,
    /// Simulate one sparsity profile and write its learning curve.
    Ensemble,
    /// Closed-form floor, optimal attraction and phi curves.
    Theory,
    /// Assumption I checks for every N_s in the config.
    Validate,
}

impl Cli {
    pub fn resolve_config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.paper_scale {
            config.paper_scale();
        }
        Ok(config)
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = cli.resolve_config()?;
    let setup = Setup::new(config, cli.workers.unwrap_or_else(default_workers))?;
    match cli.command {
        Command::Generate => commands::generate(&setup).map(drop),
        Command::Sweep => commands::sweep(&setup).map(drop),
        Command::Ensemble => commands::ensemble(&setup).map(drop),
        Command::Theory => commands::theory(&setup).map(drop),
        Command::Validate => commands::validate(&setup).map(drop),
    }?;
    log::info!("results in {}", setup.config.output_dir().display());
    Ok(())
}
