//! `fiber-piano`: simulated mechanical shaping of photon pairs in a
//! multimode fiber.
//!
//! A bank of actuators presses on a step-index fiber carrying one or both
//! photons of an entangled pair; a particle swarm drives the actuators to
//! concentrate singles, coincidences, or single-mode coupling wherever the
//! configured feedback points. Subcommands generate a starting config,
//! render speckle maps, run the optimization, and estimate the source's
//! Schmidt number.

mod commands;
mod config;
mod context;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "fiber-piano",
    version,
    about = "Shape heralded photons and photon-pair correlations through a \
             simulated multimode fiber by optimizing mechanical actuators"
)]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Override the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (default: $FIBER_PIANO_OUT, then the working dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default config.json and its field notes to the output dir.
    Init {
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Render singles and coincidence maps for one disorder realization.
    Speckle {
        /// Also write PGM rasters of the maps.
        #[arg(long)]
        pgm: bool,
    },
    /// Optimize the actuators against the configured feedback and report
    /// enhancement factors.
    Optimize {
        /// Also write PGM rasters of the maps.
        #[arg(long)]
        pgm: bool,
    },
    /// Estimate the source's Schmidt number from random-configuration
    /// contrasts.
    Schmidt,
}

fn load(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    Ok(config::load_config(path)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Workers {
                requested: workers,
                message: e.to_string(),
            })?;
    }
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os("FIBER_PIANO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    match cli.command {
        Command::Init { force } => commands::init(&out_dir, force),
        Command::Speckle { pgm } => {
            let (config, sha) = load(&cli.config)?;
            commands::speckle(config, &sha, cli.seed, &out_dir, pgm)
        }
        Command::Optimize { pgm } => {
            let (config, sha) = load(&cli.config)?;
            commands::optimize(config, &sha, cli.seed, &out_dir, pgm)
        }
        Command::Schmidt => {
            let (config, sha) = load(&cli.config)?;
            commands::schmidt(config, &sha, cli.seed, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
