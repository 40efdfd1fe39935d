//! Command-line pipeline: data generation, offline skill training, model
//! inspection, RL transfer, ablation sweeps, and exploration reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

mod commands;
mod config;
mod report;

pub use commands::{curve_rows, sanity_elbo, transfer_spec_from, CURVE_HEADER};
pub use config::ConfigMap;
pub use report::{fmt, heatmap_svg, line_chart_svg, write_csv};

use crate::Error;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "skillmix",
    version,
    about = "Hierarchical latent skill learning and KL-regularized transfer in a 2-D manipulation testbed"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key=value config file; command-line flags win on conflicts.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for env collection; 1 = fully deterministic mode.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Override any config key (repeatable), e.g. --set steps=500.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scripted-expert demonstration datasets.
    GenData(Common),
    /// Train the skill hierarchy offline on a dataset.
    TrainSkills(Common),
    /// Export transition matrix, usage histogram, and fixed-skill rollouts.
    Inspect(Common),
    /// Run RL transfer for one agent kind over several seeds.
    Transfer(Common),
    /// Offline/online regularization and structure ablation sweeps.
    Ablate(Common),
    /// Zero-shot state-coverage table.
    Explore(Common),
}

impl Common {
    fn config_map(&self) -> crate::Result<ConfigMap> {
        ConfigMap::from_sources(
            self.config.as_deref(),
            &self.set,
            &[
                ("seed", self.seed.map(|s| s.to_string())),
                (
                    "out",
                    self.out.as_ref().map(|p| p.display().to_string()),
                ),
            ],
        )
    }
}

/// Parse arguments, dispatch, and map errors onto process exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenData(c) => c.config_map().and_then(|m| commands::gen_data(&m)),
        Cmd::TrainSkills(c) => c.config_map().and_then(|m| commands::train_skills_cmd(&m)),
        Cmd::Inspect(c) => c.config_map().and_then(|m| commands::inspect(&m)),
        Cmd::Transfer(c) => c
            .config_map()
            .and_then(|m| commands::transfer(&m, c.threads)),
        Cmd::Ablate(c) => c.config_map().and_then(|m| commands::ablate(&m, c.threads)),
        Cmd::Explore(c) => c.config_map().and_then(|m| commands::explore(&m)),
    };
    match result {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}
