//! Policy extraction by advantage-weighted regression: a high-level subgoal
//! policy, a low-level action policy, a flat baseline, and their composition
//! into a hierarchical agent.

mod agent;
mod extract;
mod scorer;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use agent::{FieldCache, HierarchicalAgent, HighLevel, LowLevel, Rollout};
pub use extract::ExtractedHighPolicy;
pub use scorer::{argmax, softmax, MlpScorer, Scorer, TabularScorer};

use crate::approx::{read_checkpoint, write_checkpoint, ValueFunction};
use crate::approx::{Descriptor, OptimizerKind};
use crate::dataset::{HighBatch, LowBatch};
use crate::error::{Error, Result};
use crate::maze::{GridMaze, MoveAction};

/// Inverse temperatures and the cap on exponentiated advantages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AwrConfig {
    pub beta_h: f64,
    pub beta_l: f64,
    pub weight_clip: f64,
}

impl Default for AwrConfig {
    fn default() -> Self {
        Self {
            beta_h: 3.0,
            beta_l: 3.0,
            weight_clip: 100.0,
        }
    }
}

impl AwrConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b > 0.0 && b.is_finite();
        if !ok(self.beta_h) || !ok(self.beta_l) {
            return Err(Error::Config(format!(
                "inverse temperatures must be positive, got beta_h={} beta_l={}",
                self.beta_h, self.beta_l
            )));
        }
        if self.weight_clip.is_nan() || self.weight_clip < 1.0 {
            return Err(Error::Config(format!(
                "weight_clip must be at least 1, got {}",
                self.weight_clip
            )));
        }
        Ok(())
    }
}

/// `min(exp(beta * advantage), clip)`.
pub fn awr_weight(advantage: f64, beta: f64, clip: f64) -> f64 {
    (beta * advantage).exp().min(clip)
}

/// `V(s_{t+k}, g) - V(s_t, g)`.
pub fn high_advantage(value: &dyn ValueFunction, s: usize, subgoal: usize, g: usize) -> f64 {
    value.value(subgoal, g) - value.value(s, g)
}

/// `V(s_{t+1}, w) - V(s_t, w)` for subgoal `w`.
pub fn low_advantage(value: &dyn ValueFunction, s: usize, next: usize, subgoal: usize) -> f64 {
    value.value(next, subgoal) - value.value(s, subgoal)
}

/// Statistics of one policy update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyStats {
    /// Weighted negative log-likelihood before the step.
    pub loss: f64,
    pub mean_weight: f64,
    pub clipped_frac: f64,
}

/// `pi^h(w | s, g)` over all free cells.
#[derive(Clone, Debug)]
pub struct HighPolicy {
    pub scorer: Scorer,
    pub k: usize,
}

/// `pi^l(a | s, w)` over the five actions. Also used as the flat baseline
/// with the final goal in place of `w`.
#[derive(Clone, Debug)]
pub struct LowPolicy {
    pub scorer: Scorer,
}

impl HighPolicy {
    pub fn new(scorer: Scorer, maze: &GridMaze, k: usize) -> Result<Self> {
        if scorer.num_classes() != maze.num_cells() {
            return Err(Error::Shape(format!(
                "high-level scorer has {} classes for {} cells",
                scorer.num_classes(),
                maze.num_cells()
            )));
        }
        if k == 0 {
            return Err(Error::Config("subgoal horizon k must be at least 1".into()));
        }
        Ok(Self { scorer, k })
    }

    pub fn distribution(&self, s: usize, g: usize) -> Vec<f64> {
        softmax(&self.scorer.logits(s, g))
    }

    pub fn best(&self, s: usize, g: usize) -> usize {
        argmax(&self.scorer.logits(s, g))
    }

    /// `tags` are extra descriptor entries such as seed and step.
    pub fn save(&self, path: &Path, tags: &Descriptor) -> Result<()> {
        let desc = Descriptor::new().with("role", "high").with("k", self.k);
        save_scorer(path, desc, &self.scorer, tags)
    }

    pub fn load(path: &Path, maze: Arc<GridMaze>, optimizer: OptimizerKind) -> Result<Self> {
        let (desc, scorer) = load_scorer(path, "high", maze.clone(), optimizer)?;
        let k = desc
            .require("k")?
            .parse()
            .map_err(|_| Error::Config("bad k in policy checkpoint".into()))?;
        Self::new(scorer, &maze, k)
    }
}

impl LowPolicy {
    pub fn new(scorer: Scorer) -> Result<Self> {
        if scorer.num_classes() != MoveAction::ALL.len() {
            return Err(Error::Shape(format!(
                "action scorer has {} classes",
                scorer.num_classes()
            )));
        }
        Ok(Self { scorer })
    }

    pub fn distribution(&self, s: usize, w: usize) -> Vec<f64> {
        softmax(&self.scorer.logits(s, w))
    }

    pub fn best(&self, s: usize, w: usize) -> MoveAction {
        MoveAction::ALL[argmax(&self.scorer.logits(s, w))]
    }

    /// `role` is `low` or `flat`.
    pub fn save(&self, path: &Path, role: &str, tags: &Descriptor) -> Result<()> {
        save_scorer(
            path,
            Descriptor::new().with("role", role),
            &self.scorer,
            tags,
        )
    }

    pub fn load(
        path: &Path,
        role: &str,
        maze: Arc<GridMaze>,
        optimizer: OptimizerKind,
    ) -> Result<Self> {
        Self::new(load_scorer(path, role, maze, optimizer)?.1)
    }
}

fn save_scorer(
    path: &Path,
    mut desc: Descriptor,
    scorer: &Scorer,
    tags: &Descriptor,
) -> Result<()> {
    desc.extend(scorer.descriptor());
    desc.extend(tags.clone());
    write_checkpoint(path, &desc, &scorer.to_params())
}

fn load_scorer(
    path: &Path,
    role: &str,
    maze: Arc<GridMaze>,
    optimizer: OptimizerKind,
) -> Result<(Descriptor, Scorer)> {
    let (desc, params) = read_checkpoint(path)?;
    desc.expect("role", role)?;
    let scorer = Scorer::from_parts(maze, &desc, params, optimizer)?;
    Ok((desc, scorer))
}

fn weights_for(advantages: &[f64], beta: f64, clip: f64) -> Result<(Vec<f64>, f64, f64)> {
    if let Some(a) = advantages.iter().find(|a| a.is_nan()) {
        return Err(Error::non_finite("advantage", format!("{a}")));
    }
    let w: Vec<f64> = advantages
        .iter()
        .map(|a| awr_weight(*a, beta, clip))
        .collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let clipped = w.iter().filter(|x| **x >= clip).count() as f64 / n;
    Ok((w, mean, clipped))
}

/// One ascent step on `mean_i w_i log pi^h(s_{t+k} | s_t, g)` with
/// `w_i = min(exp(beta_h A^h), clip)`.
pub fn awr_high_step(
    policy: &mut HighPolicy,
    batch: &HighBatch,
    value: &dyn ValueFunction,
    config: &AwrConfig,
) -> Result<PolicyStats> {
    config.validate()?;
    let here = value.values_with(value.params(), &batch.states, &batch.goals);
    let ahead = value.values_with(value.params(), &batch.subgoals, &batch.goals);
    let adv: Vec<f64> = ahead.iter().zip(&here).map(|(a, b)| a - b).collect();
    let (w, mean_weight, clipped_frac) = weights_for(&adv, config.beta_h, config.weight_clip)?;
    let loss = policy
        .scorer
        .weighted_step(&batch.states, &batch.goals, &batch.subgoals, &w)?;
    Ok(PolicyStats {
        loss,
        mean_weight,
        clipped_frac,
    })
}

/// One ascent step on `mean_i w_i log pi^l(a_t | s_t, w)` with
/// `w_i = min(exp(beta_l A^l), clip)`. Given a flat batch (subgoal slot holding
/// the final goal) this is the flat baseline update.
pub fn awr_low_step(
    policy: &mut LowPolicy,
    batch: &LowBatch,
    value: &dyn ValueFunction,
    config: &AwrConfig,
) -> Result<PolicyStats> {
    config.validate()?;
    let here = value.values_with(value.params(), &batch.states, &batch.subgoals);
    let next = value.values_with(value.params(), &batch.next_states, &batch.subgoals);
    let adv: Vec<f64> = next.iter().zip(&here).map(|(a, b)| a - b).collect();
    let (w, mean_weight, clipped_frac) = weights_for(&adv, config.beta_l, config.weight_clip)?;
    let labels: Vec<u32> = batch.actions.iter().map(|a| a.index() as u32).collect();
    let loss = policy
        .scorer
        .weighted_step(&batch.states, &batch.subgoals, &labels, &w)?;
    Ok(PolicyStats {
        loss,
        mean_weight,
        clipped_frac,
    })
}

/// Flat goal-conditioned AWR baseline: the low-level update applied to
/// batches from `sample_flat_batch`, so `A = V(s', g) - V(s, g)`.
pub fn flat_awr_step(
    policy: &mut LowPolicy,
    batch: &LowBatch,
    value: &dyn ValueFunction,
    config: &AwrConfig,
) -> Result<PolicyStats> {
    awr_low_step(policy, batch, value, config)
}
