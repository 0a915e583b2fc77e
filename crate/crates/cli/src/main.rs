//! `otagcrl`: dataset generation, training, evaluation, diagnostics and
//! the bundled comparison experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ota_core::error::{Error, Result};
use ota_core::runner::{
    build_dataset, consistency_table, evaluate_oracle, evaluate_run, gen_data, hierarchy_table,
    load_trained, run_consistency_experiment, run_dir, run_hierarchy_experiment, train,
    write_diagnostics, write_metrics, write_trained, ExperimentConfig, HighChoice, LowChoice,
};
use ota_core::value::Objective;

#[derive(Parser)]
#[command(
    name = "otagcrl",
    version,
    about = "Offline goal-conditioned RL on gridworld mazes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    workers: Option<usize>,
    /// `key=value` config override with dotted keys, e.g. `value.steps=5000`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline dataset of each seed.
    GenData(Common),
    /// Train value (and policies) and write checkpoints and the training log.
    Train(Common),
    /// Evaluate trained checkpoints, or oracle levels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "policy")]
        high: Level,
        #[arg(long, value_enum, default_value = "policy")]
        low: Level,
    },
    /// Write value profiles and order-consistency summaries of trained values.
    Diagnose(Common),
    /// Train and diagnose every objective in `sweep.objectives`.
    Sweep(Common),
    /// Run a bundled experiment and print its comparison table.
    Repro {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Policy,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Bottleneck,
    Consistency,
    NSweep,
    Gamma,
}

impl Target {
    fn bundled_config(self) -> &'static str {
        match self {
            Target::Bottleneck => include_str!("../../../configs/bottleneck.toml"),
            Target::Consistency => include_str!("../../../configs/consistency.toml"),
            Target::NSweep => include_str!("../../../configs/n-sweep.toml"),
            Target::Gamma => include_str!("../../../configs/gamma.toml"),
        }
    }
}

fn load_config(common: &Common, bundled: Option<&str>) -> Result<ExperimentConfig> {
    let mut config = match (&common.config, bundled) {
        (Some(path), _) => ExperimentConfig::load(path, &common.overrides)?,
        (None, Some(text)) => ExperimentConfig::from_toml(text, &common.overrides)?,
        (None, None) => return Err(Error::Config("--config <path> is required".into())),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn sweep_objectives(config: &ExperimentConfig) -> Result<Vec<Objective>> {
    config
        .sweep
        .objectives
        .iter()
        .map(|o| {
            o.parse::<Objective>()
                .map_err(|e| Error::Config(format!("sweep.objectives: {e}")))
        })
        .collect()
}

/// Runs `f` once per seed on the worker pool, failing on the first error.
fn per_seed(config: &ExperimentConfig, f: impl Fn(u64) -> Result<()> + Sync) -> Result<()> {
    config.seeds.par_iter().map(|&s| f(s)).collect()
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::GenData(c) | Command::Train(c) | Command::Diagnose(c) | Command::Sweep(c) => c,
        Command::Eval { common, .. } | Command::Repro { common, .. } => common,
    };
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out = common.out.as_path();
    match &cli.command {
        Command::GenData(c) => {
            let config = load_config(c, None)?;
            per_seed(&config, |seed| {
                let path = gen_data(&config, seed, out)?;
                println!("{}", path.display());
                Ok(())
            })
        }
        Command::Train(c) => {
            let config = load_config(c, None)?;
            per_seed(&config, |seed| {
                let maze = Arc::new(config.maze()?);
                let dataset = build_dataset(&config, seed, maze)?;
                let run = train(&config, seed, &dataset)?;
                let dir = run_dir(out, seed);
                write_trained(&config, seed, &run, &dir)?;
                println!("{} trained in {:.1}s", dir.display(), run.seconds);
                Ok(())
            })
        }
        Command::Eval { common, high, low } => {
            let config = load_config(common, None)?;
            per_seed(&config, |seed| eval_seed(&config, seed, out, *high, *low))
        }
        Command::Diagnose(c) => {
            let config = load_config(c, None)?;
            per_seed(&config, |seed| {
                let dir = run_dir(out, seed);
                let maze = Arc::new(config.maze()?);
                let snaps = load_trained(&config, &dir, maze)?;
                let last = snaps.last().expect("at least one checkpoint");
                let summary = write_diagnostics(&config, seed, &last.value, &dir, "")?;
                println!("{} r_c={:.4}", dir.display(), summary.mean_ratio);
                Ok(())
            })
        }
        Command::Sweep(c) => {
            let config = load_config(c, None)?;
            let objectives = sweep_objectives(&config)?;
            let rows = run_consistency_experiment(&config, &objectives, Some(out))?;
            print!("{}", consistency_table(&config, &rows, &objectives));
            Ok(())
        }
        Command::Repro { target, common } => {
            let config = load_config(common, Some(target.bundled_config()))?;
            let objectives = sweep_objectives(&config)?;
            match target {
                Target::Consistency | Target::NSweep => {
                    let rows = run_consistency_experiment(&config, &objectives, Some(out))?;
                    print!("{}", consistency_table(&config, &rows, &objectives));
                }
                Target::Bottleneck | Target::Gamma => {
                    let rows = run_hierarchy_experiment(&config, &objectives, Some(out))?;
                    print!("{}", hierarchy_table(&config, &rows));
                }
            }
            Ok(())
        }
    }
}

fn eval_seed(
    config: &ExperimentConfig,
    seed: u64,
    out: &Path,
    high: Level,
    low: Level,
) -> Result<()> {
    let dir = run_dir(out, seed);
    let record = match (high, low) {
        (Level::Oracle, Level::Oracle) => evaluate_oracle(config, seed)?,
        _ => {
            let maze = Arc::new(config.maze()?);
            let snaps = load_trained(config, &dir, maze.clone())?;
            let dataset = Arc::new(build_dataset(config, seed, maze)?);
            let pick = |l: Level| matches!(l, Level::Oracle);
            let high = if pick(high) {
                HighChoice::Oracle
            } else {
                HighChoice::Policy
            };
            let low = if pick(low) {
                LowChoice::Oracle
            } else {
                LowChoice::Policy
            };
            evaluate_run(config, seed, &dataset, &snaps, None, high, low)?
        }
    };
    write_metrics(config, seed, &record, &dir, "")?;
    println!("{} success={:.4}", dir.display(), record.success_rate());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownLayout(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
