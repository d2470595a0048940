//! `groupcast` experiment runner.

mod config;
mod reproduce;
mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use run::RunDir;

#[derive(Parser)]
#[command(name = "groupcast", version, about = "Social cue forecasting experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML). Defaults to the run directory's resolved config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory. Defaults to the config's `out`, then `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write datasets and the resolved config into the run directory.
    Generate(RunArgs),
    /// Train the configured model and write a checkpoint and log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the run's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Score the checkpoint on the evaluation set.
    Evaluate(RunArgs),
    /// Posterior diagnostics and, for 1-dim latents, a latent sweep.
    Diagnose(RunArgs),
    /// Render figures from the run's tables and checkpoint.
    Plot(RunArgs),
    /// Generate, train, evaluate and compare every bundle of the suite.
    Reproduce {
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        force: bool,
        /// Divide step and group budgets by this factor (smoke runs).
        #[arg(long, default_value_t = 1)]
        scale: u64,
    },
}

/// Resolve the config and run directory. An explicit `--config` wins over
/// the run directory's stored config.
fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, RunDir)> {
    let mut cfg = match (&args.config, &args.out) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(out)) => RunDir::new(out).load_config()?,
        (None, None) => anyhow::bail!("pass --config or --out"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    cfg.out = Some(out.clone());
    Ok((cfg, RunDir::new(out)))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(a) => {
            let (cfg, dir) = resolve(&a)?;
            run::generate(&cfg, &dir, a.force)?;
        }
        Command::Train { run: a, resume } => {
            let (cfg, dir) = resolve(&a)?;
            if a.config.is_some() && !dir.config().exists() {
                anyhow::bail!("{} has no datasets; run `groupcast generate` first", dir.root.display());
            }
            run::train(&cfg, &dir, resume, a.force)?;
        }
        Command::Evaluate(a) => {
            let (cfg, dir) = resolve(&a)?;
            run::evaluate_run(&cfg, &dir)?;
        }
        Command::Diagnose(a) => {
            let (cfg, dir) = resolve(&a)?;
            run::diagnose(&cfg, &dir)?;
        }
        Command::Plot(a) => {
            let (cfg, dir) = resolve(&a)?;
            run::plot(&cfg, &dir)?;
        }
        Command::Reproduce { out, seed, force, scale } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            return reproduce::reproduce(&out, seed, force, scale);
        }
    }
    Ok(true)
}
