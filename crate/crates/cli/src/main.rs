mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specimen_core::config::RunConfig;
use specimen_core::error::Error;

#[derive(Debug, Parser)]
#[command(name = "specimen", version, about = "Specimen topology optimisation for elastic parameter identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimise a specimen topology.
    Optimize(Common),
    /// Identify the stiffness from synthetic noisy data on one topology.
    Identify(Common),
    /// Identification statistics over reference topologies and materials.
    Sweep(Common),
    /// Optimise the whole anisotropy grid.
    Gallery(Common),
    /// Mesh-refinement study of the identification weights.
    WeightsStudy(Common),
    /// Adjoint gradient against finite differences.
    GradCheck(Common),
}

/// Loaded configuration plus the bookkeeping every command needs.
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub threads: usize,
}

fn load(common: &Common) -> Result<Run, Error> {
    let (mut cfg, text) = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output.clone());
    Ok(Run {
        hash: specimen_core::io::config_hash(&text),
        cfg,
        out,
        threads: specimen_core::parallel::thread_count(),
    })
}

type Handler = fn(&Run) -> Result<bool, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Handler) = match &cli.command {
        Command::Optimize(c) => (c, commands::optimize),
        Command::Identify(c) => (c, commands::identify),
        Command::Sweep(c) => (c, commands::sweep),
        Command::Gallery(c) => (c, commands::gallery),
        Command::WeightsStudy(c) => (c, commands::weights_study),
        Command::GradCheck(c) => (c, commands::grad_check),
    };
    match load(common).and_then(|r| run(&r)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
