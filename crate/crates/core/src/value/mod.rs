//! Expectile TD value learning: the one-step objective, the option-aware
//! variant with `n`-step goal-terminated successors, and the `gamma^(1/n)`
//! ablation, plus closed forms and an exact dynamic-programming solver.

mod fixed_point;

use std::fmt;
use std::str::FromStr;

pub use fixed_point::{exhaustive_batch, tabular_fixed_point};

use crate::approx::{Optimizer, OptimizerKind, TargetCopy, ValueFunction};
use crate::dataset::ValueBatch;
use crate::error::{Error, Result};

/// `|tau - 1(u < 0)| u^2`.
#[inline]
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

/// Derivative of [`expectile_loss`] in `u`.
#[inline]
pub fn expectile_loss_grad(u: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(u, tau) * u
}

#[inline]
fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// `-(1 - gamma^d) / (1 - gamma)`: the value of a goal `d` steps away under
/// the sparse `-1` reward.
pub fn optimal_value(d: u32, gamma: f64) -> f64 {
    -(1.0 - gamma.powi(d as i32)) / (1.0 - gamma)
}

/// Optimal value when every decision covers `n` steps: `ceil(d / n)` macro
/// steps to the goal.
pub fn optimal_value_abstracted(d: u32, n: u32, gamma: f64) -> f64 {
    optimal_value(d.div_ceil(n), gamma)
}

/// Which TD target a learner regresses onto.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    /// One-step successors, discount `gamma`.
    Iql,
    /// Goal-terminated `n`-step successors, discount `gamma` per option.
    Ota(u32),
    /// One-step successors, discount `gamma^(1/n)`.
    GammaScaled(u32),
}

impl Objective {
    pub fn validate(self) -> Result<()> {
        match self {
            Objective::Ota(0) | Objective::GammaScaled(0) => Err(Error::Config(
                "abstraction factor n must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Successor horizon of the batches this objective trains on.
    pub fn horizon(self) -> usize {
        match self {
            Objective::Ota(n) => n as usize,
            Objective::Iql | Objective::GammaScaled(_) => 1,
        }
    }

    /// Per-backup discount.
    pub fn discount(self, gamma: f64) -> f64 {
        match self {
            Objective::GammaScaled(n) if n > 1 => gamma.powf(1.0 / f64::from(n)),
            _ => gamma,
        }
    }

    /// Closed-form value of a goal `d` steps away on a deterministic maze.
    pub fn closed_form(self, d: u32, gamma: f64) -> f64 {
        match self {
            Objective::Iql => optimal_value(d, gamma),
            Objective::Ota(n) => optimal_value_abstracted(d, n, gamma),
            Objective::GammaScaled(_) => optimal_value(d, self.discount(gamma)),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Iql => f.write_str("iql"),
            Objective::Ota(n) => write!(f, "ota({n})"),
            Objective::GammaScaled(n) => write!(f, "gamma_scaled({n})"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// Accepts `iql`, `ota(n)` / `ota-n` / `ota:n`, and likewise `gamma_scaled`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "iql" {
            return Ok(Objective::Iql);
        }
        let bad = || Error::Config(format!("unknown objective {s:?}"));
        let (name, arg) = if let Some(rest) = s.strip_suffix(')') {
            rest.split_once('(').ok_or_else(bad)?
        } else {
            s.rsplit_once(['-', ':']).ok_or_else(bad)?
        };
        let n: u32 = arg.trim().parse().map_err(|_| bad())?;
        let obj = match name.trim() {
            "ota" => Objective::Ota(n),
            "gamma_scaled" | "gamma-scaled" => Objective::GammaScaled(n),
            _ => return Err(bad()),
        };
        obj.validate()?;
        Ok(obj)
    }
}

/// Expectile regression settings shared by all objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectileConfig {
    pub tau: f64,
    pub gamma: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Bootstrap is dropped (`target = r`) when `s = g`.
    pub terminal_bootstrap_mask: bool,
}

impl Default for ExpectileConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            gamma: 0.99,
            optimizer: OptimizerKind::adam(3e-4),
            batch_size: 256,
            terminal_bootstrap_mask: false,
        }
    }
}

impl ExpectileConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} not in (0.5, 1)", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-step regression statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mean_residual: f64,
    pub pos_residual_frac: f64,
}

/// A value function with its target copy and optimizer state.
#[derive(Clone, Debug)]
pub struct ValueLearner<V> {
    pub value: V,
    target: TargetCopy,
    optimizer: Optimizer,
    config: ExpectileConfig,
    objective: Objective,
    sync_interval: usize,
    steps: usize,
}

impl<V: ValueFunction> ValueLearner<V> {
    /// `polyak_rate` is applied every `sync_interval` steps.
    pub fn new(
        value: V,
        objective: Objective,
        config: ExpectileConfig,
        polyak_rate: f64,
        sync_interval: usize,
    ) -> Result<Self> {
        config.validate()?;
        objective.validate()?;
        if sync_interval == 0 {
            return Err(Error::Config(
                "target sync interval must be positive".into(),
            ));
        }
        let target = TargetCopy::new(value.params(), polyak_rate)?;
        let optimizer = Optimizer::new(config.optimizer, value.params().len());
        Ok(Self {
            value,
            target,
            optimizer,
            config,
            objective,
            sync_interval,
            steps: 0,
        })
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn config(&self) -> &ExpectileConfig {
        &self.config
    }

    pub fn target(&self) -> &TargetCopy {
        &self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_value(self) -> V {
        self.value
    }

    /// One gradient step on the batch-mean expectile loss
    /// `L(r + discount * Vbar(succ, g) - V(s, g))`.
    pub fn step(&mut self, batch: &ValueBatch) -> Result<StepStats> {
        let stats = td_step(
            &mut self.value,
            &self.target,
            &mut self.optimizer,
            batch,
            self.objective.discount(self.config.gamma),
            &self.config,
        )?;
        self.steps += 1;
        if self.steps % self.sync_interval == 0 {
            self.target.sync(self.value.params())?;
        }
        Ok(stats)
    }
}

/// One-step expectile TD update (batches from `sample_value_batch`).
pub fn iql_value_step<V: ValueFunction>(
    learner: &mut ValueLearner<V>,
    batch: &ValueBatch,
) -> Result<StepStats> {
    expect_objective(learner, |o| o == Objective::Iql)?;
    learner.step(batch)
}

/// Option-aware update (batches from `sample_option_batch` with the same `n`).
pub fn ota_value_step<V: ValueFunction>(
    learner: &mut ValueLearner<V>,
    batch: &ValueBatch,
) -> Result<StepStats> {
    expect_objective(learner, |o| matches!(o, Objective::Ota(_)))?;
    learner.step(batch)
}

/// One-step update with discount `gamma^(1/n)`.
pub fn gamma_scaled_value_step<V: ValueFunction>(
    learner: &mut ValueLearner<V>,
    batch: &ValueBatch,
) -> Result<StepStats> {
    expect_objective(learner, |o| matches!(o, Objective::GammaScaled(_)))?;
    learner.step(batch)
}

fn expect_objective<V>(learner: &ValueLearner<V>, ok: impl Fn(Objective) -> bool) -> Result<()> {
    if ok(learner.objective) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "learner is configured for {}",
            learner.objective
        )))
    }
}

fn td_step<V: ValueFunction>(
    value: &mut V,
    target: &TargetCopy,
    optimizer: &mut Optimizer,
    batch: &ValueBatch,
    discount: f64,
    config: &ExpectileConfig,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty value batch".into()));
    }
    let boot = value.values_with(target.params(), &batch.successors, &batch.goals);
    let targets: Vec<f64> = (0..batch.len())
        .map(|i| {
            if config.terminal_bootstrap_mask && batch.states[i] == batch.goals[i] {
                batch.rewards[i]
            } else {
                batch.rewards[i] + discount * boot[i]
            }
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut stats = StepStats::default();
    let (_, grad) = value.forward_backward(&batch.states, &batch.goals, &mut |v| {
        let mut d = Vec::with_capacity(v.len());
        let mut pos = 0usize;
        for (vi, ti) in v.iter().zip(&targets) {
            let u = ti - vi;
            stats.loss += expectile_loss(u, config.tau);
            stats.mean_residual += u;
            pos += usize::from(u > 0.0);
            d.push(-scale * expectile_loss_grad(u, config.tau));
        }
        stats.loss *= scale;
        stats.mean_residual *= scale;
        stats.pos_residual_frac = pos as f64 * scale;
        d
    });
    if !stats.loss.is_finite() {
        return Err(Error::non_finite(
            "value loss",
            format!("loss {} mean residual {}", stats.loss, stats.mean_residual),
        ));
    }
    optimizer.apply(value.params_mut(), &grad)?;
    Ok(stats)
}

/// Repeats full steps on a fixed batch until no parameter moves by more
/// than `tol` in one step. Returns the number of steps taken.
pub fn train_until_stable<V: ValueFunction>(
    learner: &mut ValueLearner<V>,
    batch: &ValueBatch,
    tol: f64,
    max_steps: usize,
) -> Result<usize> {
    let mut prev = learner.value.params().to_vec();
    for step in 1..=max_steps {
        learner.step(batch)?;
        let delta = prev
            .iter()
            .zip(learner.value.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if delta <= tol {
            return Ok(step);
        }
        prev.copy_from_slice(learner.value.params());
    }
    Err(Error::NotConverged {
        what: format!("{} value regression", learner.objective),
        iterations: max_steps,
        residual: f64::NAN,
    })
}

/// Header line of a training log.
pub const TRAINING_LOG_HEADER: &str = "step,objective,loss,mean_residual,pos_residual_frac";

/// One training log line.
pub fn training_log_line(step: usize, objective: Objective, stats: &StepStats) -> String {
    format!(
        "{step},{objective},{:.12e},{:.12e},{:.6}",
        stats.loss, stats.mean_residual, stats.pos_residual_frac
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::approx::TabularValue;
    use crate::layouts::bundled;

    #[test]
    fn expectile_examples() {
        assert_eq!(expectile_loss(0.0, 0.3), 0.0);
        assert_eq!(expectile_loss(1.0, 0.7), 0.7);
        assert!((expectile_loss(-1.0, 0.7) - 0.3).abs() < 1e-15);
        assert!((expectile_loss(-0.5, 0.7) - 0.075).abs() < 1e-15);
        assert_eq!(expectile_loss(2.0, 0.5), 0.5 * 4.0);
        assert_eq!(expectile_loss_grad(0.0, 0.9), 0.0);
        assert_eq!(expectile_loss_grad(-0.0, 0.9), 0.0);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(optimal_value(0, 0.99), 0.0);
        assert!((optimal_value(1, 0.99) + 1.0).abs() < 1e-12);
        assert!((optimal_value(2, 0.99) + 1.99).abs() < 1e-12);
        assert!((optimal_value_abstracted(4, 2, 0.9) + 1.9).abs() < 1e-12);
        assert!((optimal_value_abstracted(5, 2, 0.9) + 2.71).abs() < 1e-12);
        for d in 0..200 {
            assert_eq!(optimal_value_abstracted(d, 1, 0.95), optimal_value(d, 0.95));
        }
        // d = 25, n = 5: five option steps versus 25 steps of a weaker discount
        let ota = Objective::Ota(5).closed_form(25, 0.95);
        let scaled = Objective::GammaScaled(5).closed_form(25, 0.95);
        assert_eq!(ota, optimal_value(5, 0.95));
        let g5 = 0.95f64.powf(0.2);
        assert!((scaled + (1.0 - g5.powi(25)) / (1.0 - g5)).abs() < 1e-12);
        assert!((ota - scaled).abs() > 1.0);
    }

    #[test]
    fn objective_parsing() {
        assert_eq!("iql".parse::<Objective>().unwrap(), Objective::Iql);
        assert_eq!("ota(10)".parse::<Objective>().unwrap(), Objective::Ota(10));
        assert_eq!("ota-5".parse::<Objective>().unwrap(), Objective::Ota(5));
        assert_eq!(
            "gamma_scaled(3)".parse::<Objective>().unwrap(),
            Objective::GammaScaled(3)
        );
        assert!("ota(0)".parse::<Objective>().is_err());
        assert!("sac".parse::<Objective>().is_err());
        for o in [Objective::Iql, Objective::Ota(7), Objective::GammaScaled(2)] {
            assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
        }
        assert_eq!(Objective::GammaScaled(1).discount(0.95), 0.95);
    }

    fn learner(objective: Objective) -> ValueLearner<TabularValue> {
        let maze = Arc::new(bundled("chain-50").unwrap());
        let config = ExpectileConfig {
            tau: 0.7,
            gamma: 0.9,
            optimizer: OptimizerKind::Sgd { lr: 1.0 },
            batch_size: 1,
            terminal_bootstrap_mask: false,
        };
        ValueLearner::new(TabularValue::new(maze), objective, config, 1.0, 1).unwrap()
    }

    #[test]
    fn residual_at_goal_successor_is_zero() {
        let mut l = learner(Objective::Iql);
        let mut batch = ValueBatch::default();
        batch.push(4, 4, 4);
        let stats = iql_value_step(&mut l, &batch).unwrap();
        assert_eq!(stats.loss, 0.0);
        assert_eq!(stats.mean_residual, 0.0);
        assert_eq!(l.value.get(4, 4), 0.0);
    }

    #[test]
    fn single_step_arithmetic() {
        // V = 0, Vbar = 0: u = -1, dL/dV = 2 (1 - tau), one SGD step moves V by -0.6
        let mut l = learner(Objective::Iql);
        let mut batch = ValueBatch::default();
        batch.push(3, 4, 9);
        let stats = l.step(&batch).unwrap();
        assert!((stats.loss - 0.3).abs() < 1e-15);
        assert_eq!(stats.pos_residual_frac, 0.0);
        assert!((l.value.get(3, 9) + 0.6).abs() < 1e-15);
        assert_eq!(l.target().params()[3 * 50 + 9], l.value.get(3, 9));
        assert!(ota_value_step(&mut l, &batch).is_err());
    }

    #[test]
    fn terminal_mask_drops_bootstrap() {
        let mut l = learner(Objective::Iql);
        l.value.set(5, 5, -2.0);
        l.target.copy_from(l.value.params()).unwrap();
        let mut batch = ValueBatch::default();
        batch.push(5, 5, 5);
        let unmasked = l.clone().step(&batch).unwrap();
        assert!((unmasked.mean_residual - (0.9 * -2.0 + 2.0)).abs() < 1e-12);
        l.config.terminal_bootstrap_mask = true;
        let masked = l.step(&batch).unwrap();
        assert!((masked.mean_residual - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_line_format() {
        let s = StepStats {
            loss: 0.5,
            mean_residual: -0.25,
            pos_residual_frac: 0.125,
        };
        let line = training_log_line(10, Objective::Ota(5), &s);
        assert_eq!(
            line,
            "10,ota(5),5.000000000000e-1,-2.500000000000e-1,0.125000"
        );
        assert_eq!(
            TRAINING_LOG_HEADER.split(',').count(),
            line.split(',').count()
        );
    }
}
