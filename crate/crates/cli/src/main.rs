//! `esi`: simulate data, train FAIR-ESI, evaluate solvers and localize single
//! fragments from one JSON experiment config.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esi_core::{EsiError, Exec};

use commands::{Overrides, SolverKind};
use config::ExperimentConfig;

const EXIT_VALIDATION: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "esi",
    version,
    about = "Electrophysiological source imaging toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults depend on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset manifest; defaults to `<data_dir>/manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint directory; defaults to `<run_dir>/best`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every grid cell and write the dataset manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train FAIR-ESI on the train/val splits.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from `<out>/last` instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Score solvers on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Repeat to compare solvers side by side.
        #[arg(long, value_enum, default_values_t = [SolverKind::Fair])]
        solver: Vec<SolverKind>,
    },
    /// Reconstruct sources for one fragment and render a topography.
    Localize {
        #[command(flatten)]
        common: Common,
        /// ESIT tensor or sample sidecar JSON.
        #[arg(long)]
        fragment: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverKind::Fair)]
        solver: SolverKind,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Localize { common, .. } => common,
        }
    }
}

fn exit_code(e: &EsiError) -> u8 {
    match e {
        EsiError::Parameter(_) | EsiError::Construction(_) | EsiError::Placement { .. } => {
            EXIT_VALIDATION
        }
        EsiError::Format(_) | EsiError::Data(_) | EsiError::Io { .. } | EsiError::Json { .. } => {
            EXIT_DATA
        }
        EsiError::Instability { .. }
        | EsiError::Numerical(_)
        | EsiError::Undefined(_)
        | EsiError::Divergence { .. } => EXIT_NUMERICAL,
    }
}

/// Sizes the worker pool from `ESI_THREADS` when set.
fn configure_threads() -> Result<(), EsiError> {
    let Ok(raw) = std::env::var("ESI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        EsiError::Parameter(format!(
            "ESI_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| EsiError::Parameter(format!("cannot size thread pool: {e}")))?;
    log::debug!("worker threads: {n}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), EsiError> {
    configure_threads()?;
    let exec = Exec::default();
    let common = cli.command.common();
    let cfg = ExperimentConfig::load(&common.config, common.seed)?;
    let o = Overrides {
        out: common.out.clone(),
        manifest: common.manifest.clone(),
        checkpoint: common.checkpoint.clone(),
    };
    match &cli.command {
        Command::Simulate { .. } => {
            commands::cmd_simulate(&cfg, &o, exec)?;
        }
        Command::Train { resume, .. } => {
            commands::cmd_train(&cfg, &o, *resume, exec)?;
        }
        Command::Eval { solver, .. } => {
            let mut solvers = solver.clone();
            solvers.dedup();
            commands::cmd_eval(&cfg, &o, &solvers, exec)?;
        }
        Command::Localize {
            fragment, solver, ..
        } => {
            commands::cmd_localize(&cfg, &o, fragment, *solver)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("esi: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
