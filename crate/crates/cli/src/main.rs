mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{AuditKind, Stage};
use crate::config::RunConfig;
use crate::error::CliError;

/// Learned surface kinematics on a synthetic mannequin: datasets, training,
/// calibration, inverse solves and audits.
#[derive(Debug, Parser)]
#[command(name = "surfik", version)]
struct Cli {
    /// JSON run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set fk.train.max_epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory. Falls back to $SURFIK_OUT, then `surfik-out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the oracle and fit the forward-model dataset.
    GenDataset,
    /// Capture marker frames from the oracle's physical surface.
    Capture {
        /// Number of frames (overrides `capture.frames`).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a network: fk, s2r (warp) or baseline (marker prediction).
    Train {
        #[arg(value_enum)]
        stage: Stage,
    },
    /// Calibration error report on held-out actuations.
    Eval,
    /// Write a target mesh from a seeded actuation.
    GenTarget,
    /// Recover actuation and pose for a target mesh.
    Solve {
        /// OBJ target; defaults to `target.obj` in the output directory.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Gradient and ablation audits; exit code 4 when a check fails.
    Audit {
        #[arg(value_enum)]
        kind: AuditKind,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut sets = cli.sets.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Command::Capture { frames: Some(n) } = cli.command {
        sets.push(format!("capture.frames={n}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &sets)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
        return Ok(());
    }
    let root = cli
        .out
        .or_else(|| std::env::var_os("SURFIK_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("surfik-out"));
    let out = artifacts::Layout::new(root)?;
    let path = match cli.command {
        Command::GenDataset => commands::gen_dataset(&cfg, &out)?,
        Command::Capture { .. } => commands::capture(&cfg, &out)?,
        Command::Train { stage } => commands::train(stage, &cfg, &out)?,
        Command::Eval => commands::eval(&cfg, &out)?,
        Command::GenTarget => commands::gen_target(&cfg, &out)?,
        Command::Solve { target } => commands::solve(&cfg, &out, target.as_deref())?,
        Command::Audit { kind } => commands::audit(kind, &cfg, &out)?,
        Command::ShowConfig => unreachable!(),
    };
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
