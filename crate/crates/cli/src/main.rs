//! `lgt`: dataset generation, topology matrices, gradient checks, training,
//! evaluation and prediction plots.
//!
//! Exit codes: 0 success, 1 check failure, 2 config error, 3 numerical abort,
//! 4 data error.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "lgt", version, about = "Lane graph transformer trajectory prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed (generator seed for `generate`, model seed otherwise).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (output file for `matrices`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Generate {
        #[arg(long, value_name = "N")]
        count: Option<usize>,
    },
    /// Build the topology matrices of one scenario as JSON.
    Matrices {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
    },
    /// Finite-difference check of every model parameter at tiny scale.
    Gradcheck {
        #[arg(long, value_name = "X", default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Train on a generated dataset.
    Train {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Start from this checkpoint; its checksum goes into the run manifest.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint (or the ground truth itself) on a dataset.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Use the ground truth as every predicted mode.
        #[arg(long)]
        oracle: bool,
        /// Train and score one model per local-attention size, e.g. "a2a=4,8,16;a2l=4,8,16;l2a=4,8,16".
        #[arg(long, value_name = "SPEC")]
        grid: Option<String>,
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
    },
    /// Plot predictions for one scenario.
    Predict {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        match cli.command {
            Command::Generate { .. } => cfg.generator.seed = seed,
            _ => {
                cfg.seed = seed;
                cfg.train.shuffle_seed = seed;
            }
        }
    }
    match &cli.command {
        Command::Train { data, epochs, resume } | Command::Eval { data, epochs, checkpoint: resume, .. } => {
            if let Some(d) = data {
                cfg.paths.data_dir = Some(d.clone());
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(c) = resume {
                cfg.paths.checkpoint = Some(c.clone());
            }
        }
        Command::Predict {
            checkpoint: Some(c), ..
        } => cfg.paths.checkpoint = Some(c.clone()),
        Command::Generate { count: Some(n) } => cfg.dataset.count = *n,
        _ => {}
    }
    if let Some(out) = &cli.common.out {
        cfg.paths.output_dir = out.clone();
    }
    cfg.validate()?;
    env_logger::Builder::new()
        .filter_level(cfg.log_level()?)
        .format_timestamp(None)
        .format_target(false)
        .init();

    let out = cfg.paths.output_dir.clone();
    match cli.command {
        Command::Generate { .. } => {
            let dir = cli.common.out.clone().or(cfg.paths.data_dir.clone()).unwrap_or(out);
            commands::generate(&cfg, &dir)
        }
        Command::Matrices { scenario } => {
            let file = cli.common.out.unwrap_or_else(|| PathBuf::from("topology.json"));
            commands::matrices(&cfg, &scenario, &file)
        }
        Command::Gradcheck { tolerance } => commands::gradcheck(&cfg, tolerance, &out),
        Command::Train { .. } => commands::train(&cfg, &out),
        Command::Eval { oracle, grid, .. } => commands::eval(&cfg, &out, oracle, grid.as_deref()),
        Command::Predict { scenario, .. } => commands::predict(&cfg, &scenario, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
