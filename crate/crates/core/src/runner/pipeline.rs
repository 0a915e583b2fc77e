use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use super::config::ExperimentConfig;
use super::eval::{evaluate_agent, fixed_tasks, EvalProtocol, EvalTask, MetricsRecord};
use super::eval::{METRICS_CSV_HEADER, SUMMARY_CSV_HEADER};
use crate::approx::{Descriptor, FeatureSpec, ValueFunction, ValueModel};
use crate::dataset::{generate_dataset, save_dataset, OfflineDataset};
use crate::diagnostics::{
    collect_optimal_trajectories, consistency_csv, consistency_summary, profile_csv, value_profile,
    ConsistencySummary, OptimalTrajectory,
};
use crate::error::{Error, Result};
use crate::maze::GridMaze;
use crate::policy::{
    awr_high_step, awr_low_step, ExtractedHighPolicy, HierarchicalAgent, HighLevel, HighPolicy,
    LowLevel, LowPolicy, MlpScorer, Scorer,
};
use crate::rng::{derive, seeded, stream_id};
use crate::value::{training_log_line, Objective, ValueLearner, TRAINING_LOG_HEADER};

/// Comment line opening every text artifact of a run.
pub fn provenance(config: &ExperimentConfig, seed: u64) -> String {
    format!(
        "# name={} config={} seed={}",
        config.name,
        config.hash(),
        seed
    )
}

pub fn run_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn rng_for(seed: u64, label: &str) -> crate::rng::SeededRng {
    derive(seed, stream_id(label))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The run's dataset, generated from `(config, seed)`.
pub fn build_dataset(
    config: &ExperimentConfig,
    seed: u64,
    maze: Arc<GridMaze>,
) -> Result<OfflineDataset> {
    let generation = config.generation(&maze)?;
    generate_dataset(maze, &generation, &mut rng_for(seed, "dataset"))
}

/// Writes `dataset.txt` into the run directory.
pub fn gen_data(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    let maze = Arc::new(config.maze()?);
    let ds = build_dataset(config, seed, maze)?;
    let path = run_dir(out, seed).join("dataset.txt");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let extras = [
        ("seed".to_string(), seed.to_string()),
        ("config".to_string(), config.hash()),
    ];
    save_dataset(&ds, &extras, &path)?;
    Ok(path)
}

/// Parameters snapshotted at one checkpoint fraction.
#[derive(Debug)]
pub struct Snapshot {
    pub fraction: f64,
    pub step: usize,
    pub value: ValueModel,
    pub low: Option<LowPolicy>,
    pub high: Option<HighPolicy>,
}

/// Result of [`train`]: checkpoint snapshots and the training log.
#[derive(Debug)]
pub struct TrainedRun {
    pub objective: Objective,
    pub snapshots: Vec<Snapshot>,
    pub log: String,
    pub seconds: f64,
}

impl TrainedRun {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("at least one checkpoint")
    }
}

/// Step at which fraction `f` of `steps` is reached (at least 1).
pub fn checkpoint_step(f: f64, steps: usize) -> usize {
    ((f * steps as f64).round() as usize).clamp(1, steps.max(1))
}

/// Trains the configured value and, when enabled, the policies jointly: each
/// value step is followed by `updates_per_step` policy steps that read the
/// live value.
pub fn train(config: &ExperimentConfig, seed: u64, dataset: &OfflineDataset) -> Result<TrainedRun> {
    let start = Instant::now();
    let maze = dataset.maze().clone();
    let objective = config.objective()?;
    let goals = config.goal_sampling()?;
    let awr = config.awr()?;
    let spec = config.value_spec()?;
    let model = ValueModel::new(maze.clone(), &spec, &mut rng_for(seed, "value-init"));
    let mut learner = ValueLearner::new(
        model,
        objective,
        config.expectile()?,
        config.value.polyak,
        config.value.sync_interval,
    )?;
    let p = &config.policy;
    let mut low = if p.train_low {
        let features: FeatureSpec = p.low_features.parse()?;
        let scorer = MlpScorer::new(
            maze.clone(),
            features,
            &p.low_hidden,
            5,
            config.policy_optimizer(),
            &mut rng_for(seed, "low-init"),
        );
        Some(LowPolicy::new(Scorer::Mlp(scorer))?)
    } else {
        None
    };
    let mut high = if p.high == "learned" {
        let features: FeatureSpec = p.high_features.parse()?;
        let scorer = MlpScorer::new(
            maze.clone(),
            features,
            &p.high_hidden,
            maze.num_cells(),
            config.policy_optimizer(),
            &mut rng_for(seed, "high-init"),
        );
        Some(HighPolicy::new(Scorer::Mlp(scorer), &maze, p.k)?)
    } else {
        None
    };
    let steps = config.value.steps;
    let mut marks: Vec<(usize, f64)> = config
        .eval
        .checkpoints
        .iter()
        .map(|f| (checkpoint_step(*f, steps), *f))
        .collect();
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut value_rng = rng_for(seed, "value-batches");
    let mut policy_rng = rng_for(seed, "policy-batches");
    let mut log = String::new();
    writeln!(log, "{}", provenance(config, seed)).unwrap();
    writeln!(log, "{TRAINING_LOG_HEADER}").unwrap();
    let mut snapshots = Vec::new();
    for step in 1..=steps {
        let batch = dataset.sample_option_batch(
            &goals,
            objective.horizon(),
            config.value.batch_size,
            &mut value_rng,
        )?;
        let stats = learner.step(&batch)?;
        let updates = if step % p.update_interval == 0 {
            p.updates_per_step
        } else {
            0
        };
        for _ in 0..updates {
            if let Some(low) = low.as_mut() {
                let b = dataset.sample_low_batch(p.k, p.batch_size, &mut policy_rng)?;
                awr_low_step(low, &b, &learner.value, &awr)?;
            }
            if let Some(high) = high.as_mut() {
                let b = dataset.sample_high_batch(&goals, p.k, p.batch_size, &mut policy_rng)?;
                awr_high_step(high, &b, &learner.value, &awr)?;
            }
        }
        if step % config.value.log_interval == 0 || step == steps {
            writeln!(log, "{}", training_log_line(step, objective, &stats)).unwrap();
        }
        for &(at, fraction) in &marks {
            if at == step && !snapshots.iter().any(|s: &Snapshot| s.fraction == fraction) {
                snapshots.push(Snapshot {
                    fraction,
                    step,
                    value: learner.value.clone(),
                    low: low.clone(),
                    high: high.clone(),
                });
            }
        }
    }
    if steps == 0 {
        return Err(Error::Config("value.steps must be positive".into()));
    }
    Ok(TrainedRun {
        objective,
        snapshots,
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn tags(config: &ExperimentConfig, seed: u64, snap: &Snapshot) -> Descriptor {
    Descriptor::new()
        .with("config", config.hash())
        .with("seed", seed)
        .with("step", snap.step)
}

fn ckpt_name(role: &str, fraction: f64) -> String {
    format!("{role}-{fraction:.2}.ckpt")
}

/// Writes checkpoints, `train_log.csv` and the resolved `config.toml`.
pub fn write_trained(
    config: &ExperimentConfig,
    seed: u64,
    run: &TrainedRun,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.toml"), &config.to_toml())?;
    write_file(&dir.join("train_log.csv"), &run.log)?;
    for snap in &run.snapshots {
        let t = tags(config, seed, snap);
        snap.value
            .save_tagged(&dir.join(ckpt_name("value", snap.fraction)), &t)?;
        if let Some(low) = &snap.low {
            low.save(&dir.join(ckpt_name("low", snap.fraction)), "low", &t)?;
        }
        if let Some(high) = &snap.high {
            high.save(&dir.join(ckpt_name("high", snap.fraction)), &t)?;
        }
    }
    Ok(())
}

/// Reads back what [`write_trained`] wrote for the configured checkpoints.
pub fn load_trained(
    config: &ExperimentConfig,
    dir: &Path,
    maze: Arc<GridMaze>,
) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    for &fraction in &config.eval.checkpoints {
        let path = dir.join(ckpt_name("value", fraction));
        if !path.exists() {
            return Err(Error::Config(format!(
                "missing checkpoint {}; run `train` with this config first",
                path.display()
            )));
        }
        let value = ValueModel::load(&path, maze.clone())?;
        let low_path = dir.join(ckpt_name("low", fraction));
        let low = if low_path.exists() {
            Some(LowPolicy::load(
                &low_path,
                "low",
                maze.clone(),
                config.policy_optimizer(),
            )?)
        } else {
            None
        };
        let high_path = dir.join(ckpt_name("high", fraction));
        let high = if high_path.exists() {
            Some(HighPolicy::load(
                &high_path,
                maze.clone(),
                config.policy_optimizer(),
            )?)
        } else {
            None
        };
        out.push(Snapshot {
            fraction,
            step: checkpoint_step(fraction, config.value.steps),
            value,
            low,
            high,
        });
    }
    Ok(out)
}

/// Which subgoal source an evaluated agent uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HighChoice {
    /// The configured policy (extracted or learned) built from the snapshot.
    Policy,
    Oracle,
}

/// Which action source an evaluated agent uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowChoice {
    Policy,
    Oracle,
}

pub fn eval_protocol(config: &ExperimentConfig, maze: &GridMaze) -> EvalProtocol {
    EvalProtocol {
        num_goals: config.eval.num_goals,
        rollouts_per_goal: config.eval.rollouts_per_goal,
        checkpoint_fractions: config.eval.checkpoints.clone(),
        episode_cap: config
            .eval
            .episode_cap
            .unwrap_or_else(|| maze.episode_cap()),
        start_jitter: config.eval.start_jitter,
    }
}

pub fn eval_tasks(config: &ExperimentConfig, maze: &GridMaze) -> Result<Vec<EvalTask>> {
    let min = (config.eval.min_task_distance * f64::from(maze.diameter())).round() as u32;
    fixed_tasks(maze, config.eval.num_goals, min, config.eval.task_seed)
}

/// Builds the agent for one checkpoint. `low` overrides the snapshot's own
/// low-level policy (to share one low level across value variants).
pub fn build_agent(
    config: &ExperimentConfig,
    dataset: &Arc<OfflineDataset>,
    snap: &Snapshot,
    low: Option<&LowPolicy>,
    high: HighChoice,
    low_choice: LowChoice,
) -> Result<HierarchicalAgent> {
    let maze = dataset.maze().clone();
    let high = match high {
        HighChoice::Oracle => HighLevel::Oracle {
            k: config.oracle_k(),
        },
        HighChoice::Policy => match &snap.high {
            Some(h) if config.policy.high == "learned" => HighLevel::Learned(h.clone()),
            _ if config.policy.high == "learned" => {
                return Err(Error::Config(
                    "checkpoint has no learned high-level policy".into(),
                ))
            }
            _ => {
                let value: Arc<dyn ValueFunction> = Arc::new(snap.value.clone());
                HighLevel::Extracted(ExtractedHighPolicy::new(
                    dataset.clone(),
                    value,
                    config.goal_sampling()?,
                    config.policy.k,
                    &config.awr()?,
                )?)
            }
        },
    };
    let low = match low_choice {
        LowChoice::Oracle => LowLevel::OracleGreedy,
        LowChoice::Policy => match low.or(snap.low.as_ref()) {
            Some(l) => LowLevel::Learned(l.clone()),
            None => {
                return Err(Error::Config(
                    "no low-level policy: enable policy.train_low or share one".into(),
                ))
            }
        },
    };
    Ok(
        HierarchicalAgent::new(maze, high, low, config.eval.replan_interval)?
            .sampling(config.eval.sample_high, config.eval.sample_low),
    )
}

/// Evaluates every snapshot with the given level choices. `shared_low`
/// supplies one low-level policy per snapshot.
pub fn evaluate_run(
    config: &ExperimentConfig,
    seed: u64,
    dataset: &Arc<OfflineDataset>,
    snapshots: &[Snapshot],
    shared_low: Option<&[Snapshot]>,
    high: HighChoice,
    low: LowChoice,
) -> Result<MetricsRecord> {
    let maze = dataset.maze();
    let protocol = eval_protocol(config, maze);
    let tasks = eval_tasks(config, maze)?;
    let mut rng = rng_for(seed, "eval");
    let mut record = MetricsRecord::default();
    for (i, snap) in snapshots.iter().enumerate() {
        let shared = shared_low
            .and_then(|s| s.get(i))
            .and_then(|s| s.low.as_ref());
        let agent = build_agent(config, dataset, snap, shared, high, low)?;
        let mut r = seeded(rng.gen());
        record.extend(evaluate_agent(
            &agent,
            &tasks,
            &protocol,
            snap.fraction,
            &mut r,
        )?);
    }
    record.check_finite()?;
    Ok(record)
}

/// Writes `metrics.csv` and `summary.csv` with the given file prefix.
pub fn write_metrics(
    config: &ExperimentConfig,
    seed: u64,
    record: &MetricsRecord,
    dir: &Path,
    prefix: &str,
) -> Result<()> {
    let head = provenance(config, seed);
    write_file(
        &dir.join(format!("{prefix}metrics.csv")),
        &format!("{head}\n{METRICS_CSV_HEADER}\n{}", record.csv_rows()),
    )?;
    write_file(
        &dir.join(format!("{prefix}summary.csv")),
        &format!("{head}\n{SUMMARY_CSV_HEADER}\n{}", record.summary_rows()),
    )
}

/// Shortest-path trajectories between fixed far-apart pairs used by the diagnostics.
pub fn diagnostic_trajectories(
    config: &ExperimentConfig,
    maze: &GridMaze,
) -> Result<Vec<OptimalTrajectory>> {
    let d = &config.diagnostics;
    let min = ((d.min_distance * f64::from(maze.diameter())).round() as u32).max(d.k as u32);
    let tasks = fixed_tasks(maze, d.num_trajectories, min, d.trajectory_seed)?;
    let pairs: Vec<(usize, usize)> = tasks.iter().map(|t| (t.start, t.goal)).collect();
    collect_optimal_trajectories(maze, &pairs)
}

/// Order consistency of a value on the diagnostic trajectories.
pub fn consistency_of(
    value: &dyn ValueFunction,
    trajs: &[OptimalTrajectory],
    k: usize,
) -> Result<ConsistencySummary> {
    let f = |s: usize, g: usize| value.value(s, g);
    consistency_summary(&f, trajs, k)
}

/// Writes `consistency.csv` and one `profile-<i>.csv` per trajectory.
pub fn write_diagnostics(
    config: &ExperimentConfig,
    seed: u64,
    value: &dyn ValueFunction,
    dir: &Path,
    prefix: &str,
) -> Result<ConsistencySummary> {
    let maze = value.maze().clone();
    let trajs = diagnostic_trajectories(config, &maze)?;
    let summary = consistency_of(value, &trajs, config.diagnostics.k)?;
    let head = provenance(config, seed);
    write_file(
        &dir.join(format!("{prefix}consistency.csv")),
        &format!("{head}\n{}", consistency_csv(&summary)),
    )?;
    let f = |s: usize, g: usize| value.value(s, g);
    for (i, t) in trajs.iter().enumerate() {
        let profile = value_profile(&f, &maze, t, config.value.gamma);
        write_file(
            &dir.join(format!("{prefix}profile-{i}.csv")),
            &format!("{head}\n{}", profile_csv(&profile)),
        )?;
    }
    Ok(summary)
}

/// Evaluates the oracle-high, oracle-low agent at every configured
/// checkpoint. Needs no trained artifacts.
pub fn evaluate_oracle(config: &ExperimentConfig, seed: u64) -> Result<MetricsRecord> {
    let maze = Arc::new(config.maze()?);
    let protocol = eval_protocol(config, &maze);
    let tasks = eval_tasks(config, &maze)?;
    let agent = HierarchicalAgent::new(
        maze,
        HighLevel::Oracle {
            k: config.oracle_k(),
        },
        LowLevel::OracleGreedy,
        config.eval.replan_interval,
    )?;
    let mut rng = rng_for(seed, "eval");
    let mut record = MetricsRecord::default();
    for &fraction in &config.eval.checkpoints {
        let mut r = seeded(rng.gen());
        record.extend(evaluate_agent(&agent, &tasks, &protocol, fraction, &mut r)?);
    }
    record.check_finite()?;
    Ok(record)
}
