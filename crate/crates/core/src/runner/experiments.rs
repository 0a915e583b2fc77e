use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pipeline::{
    build_dataset, consistency_of, diagnostic_trajectories, evaluate_run, provenance, run_dir,
    train, write_diagnostics, write_metrics, write_trained, HighChoice, LowChoice, TrainedRun,
};
use crate::error::{Error, Result};
use crate::value::Objective;

/// Order consistency of one trained value.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub seed: u64,
    pub objective: Objective,
    pub mean_ratio: f64,
    pub pooled_ratio: f64,
    pub seconds: f64,
}

/// Mean and standard error over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanStderr {
        mean,
        stderr,
        count: n,
    }
}

fn check_objectives(objectives: &[Objective]) -> Result<()> {
    if objectives.is_empty() {
        return Err(Error::Config("no objectives to compare".into()));
    }
    for o in objectives {
        o.validate()?;
    }
    Ok(())
}

/// Trains a value per (seed, objective) and measures its order consistency
/// on the diagnostic trajectories. Seeds run in parallel.
pub fn run_consistency_experiment(
    config: &ExperimentConfig,
    objectives: &[Objective],
    out: Option<&Path>,
) -> Result<Vec<ConsistencyRow>> {
    check_objectives(objectives)?;
    let per_seed: Vec<Result<Vec<ConsistencyRow>>> = config
        .seeds
        .par_iter()
        .map(|&seed| run_consistency_seed(config, seed, objectives, out))
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    if let Some(out) = out {
        write_table(
            out,
            "consistency_table.csv",
            &consistency_table(config, &rows, objectives),
        )?;
    }
    Ok(rows)
}

/// One seed of [`run_consistency_experiment`], writing under `out/seed-<seed>`.
pub fn run_consistency_seed(
    config: &ExperimentConfig,
    seed: u64,
    objectives: &[Objective],
    out: Option<&Path>,
) -> Result<Vec<ConsistencyRow>> {
    let maze = Arc::new(config.maze()?);
    let dataset = build_dataset(config, seed, maze.clone())?;
    let trajs = diagnostic_trajectories(config, &maze)?;
    let mut rows = Vec::new();
    for &objective in objectives {
        let mut c = config.with_objective(objective);
        c.policy.train_low = false;
        c.policy.high = "extracted".into();
        let run = train(&c, seed, &dataset)?;
        let value = &run.last().value;
        let summary = consistency_of(value, &trajs, c.diagnostics.k)?;
        if let Some(out) = out {
            let dir = run_dir(out, seed).join(objective.to_string());
            write_trained(&c, seed, &run, &dir)?;
            write_diagnostics(&c, seed, value, &dir, "")?;
        }
        rows.push(ConsistencyRow {
            seed,
            objective,
            mean_ratio: summary.mean_ratio,
            pooled_ratio: summary.pooled_ratio,
            seconds: run.seconds,
        });
    }
    Ok(rows)
}

/// `seed,objective,r_c,r_c_pooled` rows followed by per-objective
/// `mean,<objective>,<mean>,<stderr>` rows.
pub fn consistency_table(
    config: &ExperimentConfig,
    rows: &[ConsistencyRow],
    objectives: &[Objective],
) -> String {
    let mut out = format!(
        "# name={} config={}\nseed,objective,r_c,r_c_pooled\n",
        config.name,
        config.hash()
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.seed, r.objective, r.mean_ratio, r.pooled_ratio
        )
        .unwrap();
    }
    for o in objectives {
        let xs: Vec<f64> = rows
            .iter()
            .filter(|r| r.objective == *o)
            .map(|r| r.mean_ratio)
            .collect();
        let m = mean_stderr(&xs);
        writeln!(out, "mean,{o},{:.6},{:.6}", m.mean, m.stderr).unwrap();
    }
    out
}

fn write_table(out: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// One agent variant of one seed in [`run_hierarchy_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyRow {
    pub seed: u64,
    /// `oracle` or the objective whose value drives the extracted high level.
    pub variant: String,
    pub success: f64,
    /// Order consistency of the variant's value (absent for the oracle).
    pub r_c: Option<f64>,
    /// Seconds spent on this variant. The oracle row carries the shared
    /// one-step value and low-level training; the one-step row reuses it.
    pub seconds: f64,
}

/// The bottleneck probe and its value-objective comparisons.
///
/// Per seed, a one-step (iql) value is trained jointly with the low-level
/// policy; that low level is shared by every variant. The oracle variant
/// pairs it with shortest-path subgoals, every other variant with a high
/// level extracted from the value trained under `objectives[i]`.
pub fn run_hierarchy_experiment(
    config: &ExperimentConfig,
    objectives: &[Objective],
    out: Option<&Path>,
) -> Result<Vec<HierarchyRow>> {
    check_objectives(objectives)?;
    let per_seed: Vec<Result<Vec<HierarchyRow>>> = config
        .seeds
        .par_iter()
        .map(|&seed| run_hierarchy_seed(config, seed, objectives, out))
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    if let Some(out) = out {
        write_table(out, "hierarchy_table.csv", &hierarchy_table(config, &rows))?;
    }
    Ok(rows)
}

/// Oracle subgoals versus subgoals from the one-step value, on one shared
/// low-level policy per seed.
pub fn run_bottleneck_experiment(
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<Vec<HierarchyRow>> {
    run_hierarchy_experiment(config, &[Objective::Iql], out)
}

/// One seed of [`run_hierarchy_experiment`], writing under `out/seed-<seed>`.
pub fn run_hierarchy_seed(
    config: &ExperimentConfig,
    seed: u64,
    objectives: &[Objective],
    out: Option<&Path>,
) -> Result<Vec<HierarchyRow>> {
    let maze = Arc::new(config.maze()?);
    let dataset = Arc::new(build_dataset(config, seed, maze.clone())?);
    let trajs = diagnostic_trajectories(config, &maze)?;
    let mut base = config.with_objective(Objective::Iql);
    base.policy.train_low = true;
    base.policy.high = "extracted".into();
    let clock = Instant::now();
    let low_run = train(&base, seed, &dataset)?;
    let dir = out.map(|o| run_dir(o, seed));
    if let Some(d) = &dir {
        write_trained(&base, seed, &low_run, &d.join("low"))?;
    }
    let mut rows = Vec::new();
    let oracle = evaluate_run(
        &base,
        seed,
        &dataset,
        &low_run.snapshots,
        None,
        HighChoice::Oracle,
        LowChoice::Policy,
    )?;
    if let Some(d) = &dir {
        write_metrics(&base, seed, &oracle, &d.join("oracle"), "")?;
    }
    rows.push(HierarchyRow {
        seed,
        variant: "oracle".into(),
        success: oracle.success_rate(),
        r_c: None,
        seconds: clock.elapsed().as_secs_f64(),
    });
    for &objective in objectives {
        let clock = Instant::now();
        let c = config.with_objective(objective);
        let trained;
        let run: &TrainedRun = if objective == Objective::Iql {
            &low_run
        } else {
            let mut vc = c.clone();
            vc.policy.train_low = false;
            vc.policy.high = "extracted".into();
            trained = train(&vc, seed, &dataset)?;
            &trained
        };
        let record = evaluate_run(
            &c,
            seed,
            &dataset,
            &run.snapshots,
            Some(&low_run.snapshots),
            HighChoice::Policy,
            LowChoice::Policy,
        )?;
        let value = &run.last().value;
        let summary = consistency_of(value, &trajs, c.diagnostics.k)?;
        if let Some(d) = &dir {
            let vdir = d.join(objective.to_string());
            if objective != Objective::Iql {
                write_trained(&c, seed, run, &vdir)?;
            }
            write_metrics(&c, seed, &record, &vdir, "")?;
            write_diagnostics(&c, seed, value, &vdir, "")?;
        }
        rows.push(HierarchyRow {
            seed,
            variant: objective.to_string(),
            success: record.success_rate(),
            r_c: Some(summary.mean_ratio),
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// `seed,variant,success,r_c` rows followed by per-variant means.
pub fn hierarchy_table(config: &ExperimentConfig, rows: &[HierarchyRow]) -> String {
    let mut out = format!(
        "{}\nseed,variant,success,r_c\n",
        provenance(config, config.seeds[0])
    );
    let fmt = |x: Option<f64>| x.map_or("".to_string(), |v| format!("{v:.6}"));
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{}",
            r.seed,
            r.variant,
            r.success,
            fmt(r.r_c)
        )
        .unwrap();
    }
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    for v in variants {
        let pick: Vec<&HierarchyRow> = rows.iter().filter(|r| r.variant == v).collect();
        let s = mean_stderr(&pick.iter().map(|r| r.success).collect::<Vec<_>>());
        let rc: Vec<f64> = pick.iter().filter_map(|r| r.r_c).collect();
        let rc = (!rc.is_empty()).then(|| mean_stderr(&rc).mean);
        writeln!(out, "mean,{v},{:.6},{}", s.mean, fmt(rc)).unwrap();
    }
    out
}

/// Mean of `f` over the rows of one variant.
pub fn variant_mean(
    rows: &[HierarchyRow],
    variant: &str,
    f: impl Fn(&HierarchyRow) -> Option<f64>,
) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant)
        .filter_map(f)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
