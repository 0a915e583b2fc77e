use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{FeatureSpec, OptimizerKind, ValueSpec};
use crate::dataset::{BehaviorTag, GenerationConfig, GoalSamplingConfig};
use crate::error::{Error, Result};
use crate::layouts::bundled;
use crate::maze::GridMaze;
use crate::policy::AwrConfig;
use crate::value::{ExpectileConfig, Objective};

/// Everything a run needs, read from a TOML file with one table per module.
/// Every field has a default, so a config only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub maze: MazeSection,
    pub dataset: DatasetSection,
    pub goals: GoalSection,
    pub value: ValueSection,
    pub policy: PolicySection,
    pub eval: EvalSection,
    pub diagnostics: DiagnosticsSection,
    pub sweep: SweepSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeSection {
    pub layout: String,
    pub slip_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub regime: String,
    pub num_transitions: usize,
    /// Regime default when absent.
    pub noise: Option<f64>,
    /// Stitch/explore episode length; 20% of the episode cap when absent.
    pub segment_length: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalSection {
    pub p_cur: f64,
    pub p_traj: f64,
    pub p_rand: f64,
    pub traj_geometric_discount: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueSection {
    pub objective: String,
    pub representation: String,
    pub hidden: Vec<usize>,
    pub features: String,
    pub tau: f64,
    pub gamma: f64,
    pub optimizer: String,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub polyak: f64,
    pub sync_interval: usize,
    pub terminal_bootstrap_mask: bool,
    pub log_interval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub k: usize,
    pub beta_h: f64,
    pub beta_l: f64,
    pub weight_clip: f64,
    /// `extracted` (closed-form AWR maximizer over dataset subgoals) or
    /// `learned` (MLP head trained by gradient steps).
    pub high: String,
    pub high_hidden: Vec<usize>,
    pub high_features: String,
    pub train_low: bool,
    pub low_hidden: Vec<usize>,
    pub low_features: String,
    pub lr: f64,
    pub batch_size: usize,
    /// Policy updates per value update when trained jointly.
    pub updates_per_step: usize,
    /// Policies are updated on every `update_interval`-th value step.
    pub update_interval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub num_goals: usize,
    pub rollouts_per_goal: usize,
    pub checkpoints: Vec<f64>,
    /// Episode cap; twice the maze diameter when absent.
    pub episode_cap: Option<usize>,
    /// Minimum start-goal distance of the fixed tasks, as a fraction of the diameter.
    pub min_task_distance: f64,
    /// Seed choosing the fixed tasks; shared by all training seeds.
    pub task_seed: u64,
    /// Each rollout starts after this many uniformly random moves from the task start.
    pub start_jitter: usize,
    pub replan_interval: usize,
    /// Distance of oracle subgoals along the shortest path; the policy's `k` when absent.
    pub oracle_k: Option<usize>,
    /// Sample subgoals from the high level instead of taking its argmax.
    pub sample_high: bool,
    /// Sample actions from the low level instead of taking its argmax.
    pub sample_low: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub k: usize,
    pub num_trajectories: usize,
    /// Minimum start-goal distance of the optimal trajectories, as a fraction of the diameter.
    pub min_distance: f64,
    pub trajectory_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub objectives: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seeds: vec![0],
            maze: MazeSection::default(),
            dataset: DatasetSection::default(),
            goals: GoalSection::default(),
            value: ValueSection::default(),
            policy: PolicySection::default(),
            eval: EvalSection::default(),
            diagnostics: DiagnosticsSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for MazeSection {
    fn default() -> Self {
        Self {
            layout: "maze-medium".into(),
            slip_prob: 0.0,
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            regime: "navigate".into(),
            num_transitions: 1_000_000,
            noise: None,
            segment_length: None,
        }
    }
}

impl Default for GoalSection {
    fn default() -> Self {
        let g = GoalSamplingConfig::default();
        Self {
            p_cur: g.p_cur,
            p_traj: g.p_traj,
            p_rand: g.p_rand,
            traj_geometric_discount: g.traj_geometric_discount,
        }
    }
}

impl Default for ValueSection {
    fn default() -> Self {
        let e = ExpectileConfig::default();
        Self {
            objective: "iql".into(),
            representation: "mlp".into(),
            hidden: vec![256, 256],
            features: FeatureSpec::NormalizedCoords.to_string(),
            tau: e.tau,
            gamma: e.gamma,
            optimizer: "adam".into(),
            lr: 3e-4,
            batch_size: e.batch_size,
            steps: 200_000,
            polyak: 0.005,
            sync_interval: 1,
            terminal_bootstrap_mask: e.terminal_bootstrap_mask,
            log_interval: 1000,
        }
    }
}

impl Default for PolicySection {
    fn default() -> Self {
        let a = AwrConfig::default();
        Self {
            k: 25,
            beta_h: a.beta_h,
            beta_l: a.beta_l,
            weight_clip: a.weight_clip,
            high: "extracted".into(),
            high_hidden: vec![256, 256],
            high_features: FeatureSpec::OnehotPair.to_string(),
            train_low: false,
            low_hidden: vec![256, 256],
            low_features: FeatureSpec::OnehotPair.to_string(),
            lr: 3e-4,
            batch_size: 256,
            updates_per_step: 1,
            update_interval: 1,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            num_goals: 5,
            rollouts_per_goal: 50,
            checkpoints: vec![0.8, 0.9, 1.0],
            episode_cap: None,
            min_task_distance: 0.6,
            task_seed: 2024,
            start_jitter: 3,
            replan_interval: 1,
            oracle_k: None,
            sample_high: false,
            sample_low: false,
        }
    }
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            k: 25,
            num_trajectories: 5,
            min_distance: 0.5,
            trajectory_seed: 99,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            objectives: vec!["iql".into(), "ota(5)".into(), "ota(10)".into()],
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file and applies `key=value` overrides (dotted keys,
    /// values parsed as TOML literals, falling back to strings).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML rendering of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        self.maze()?;
        self.generation(&self.maze()?)?;
        self.goal_sampling()?.validate()?;
        self.objective()?;
        self.value_spec()?;
        self.expectile()?.validate()?;
        if !(self.value.polyak > 0.0 && self.value.polyak <= 1.0) {
            return bad(format!(
                "value.polyak must be in (0, 1], got {}",
                self.value.polyak
            ));
        }
        if self.value.sync_interval == 0 || self.value.log_interval == 0 {
            return bad("value.sync_interval and value.log_interval must be positive".into());
        }
        self.awr()?.validate()?;
        if self.policy.k == 0 {
            return bad("policy.k must be at least 1".into());
        }
        if !matches!(self.policy.high.as_str(), "extracted" | "learned") {
            return bad(format!(
                "policy.high must be extracted or learned, got {:?}",
                self.policy.high
            ));
        }
        self.policy.high_features.parse::<FeatureSpec>()?;
        self.policy.low_features.parse::<FeatureSpec>()?;
        if !(self.policy.lr > 0.0)
            || self.policy.batch_size == 0
            || self.policy.updates_per_step == 0
            || self.policy.update_interval == 0
        {
            return bad(
                "policy.lr, policy.batch_size, policy.updates_per_step and policy.update_interval must be positive"
                    .into(),
            );
        }
        let e = &self.eval;
        if e.num_goals == 0 || e.rollouts_per_goal == 0 || e.replan_interval == 0 {
            return bad("eval counts and replan_interval must be positive".into());
        }
        if e.checkpoints.is_empty() || e.checkpoints.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return bad(format!(
                "eval.checkpoints must be fractions in (0, 1], got {:?}",
                e.checkpoints
            ));
        }
        if !(0.0..=1.0).contains(&e.min_task_distance)
            || !(0.0..=1.0).contains(&self.diagnostics.min_distance)
        {
            return bad("task and trajectory distances are fractions of the diameter".into());
        }
        if e.oracle_k == Some(0) || e.episode_cap == Some(0) {
            return bad("eval.oracle_k and eval.episode_cap must be positive".into());
        }
        if self.diagnostics.k == 0 || self.diagnostics.num_trajectories == 0 {
            return bad("diagnostics.k and diagnostics.num_trajectories must be positive".into());
        }
        for o in &self.sweep.objectives {
            o.parse::<Objective>()?.validate()?;
        }
        Ok(())
    }

    pub fn maze(&self) -> Result<GridMaze> {
        let maze = bundled(&self.maze.layout)?;
        if self.maze.slip_prob == 0.0 {
            Ok(maze)
        } else {
            maze.with_slip(self.maze.slip_prob)
        }
    }

    pub fn regime(&self) -> Result<BehaviorTag> {
        self.dataset.regime.parse()
    }

    pub fn generation(&self, maze: &GridMaze) -> Result<GenerationConfig> {
        let mut g =
            GenerationConfig::for_regime(maze, self.regime()?, self.dataset.num_transitions);
        if let Some(noise) = self.dataset.noise {
            g.noise = noise;
        }
        if let Some(len) = self.dataset.segment_length {
            g.segment_length = len;
        }
        if g.num_transitions == 0 || !(0.0..1.0).contains(&g.noise) || g.segment_length == 0 {
            return Err(Error::Config(
                "dataset needs positive size and segment length and noise in [0, 1)".into(),
            ));
        }
        Ok(g)
    }

    pub fn goal_sampling(&self) -> Result<GoalSamplingConfig> {
        let g = &self.goals;
        let mut c = GoalSamplingConfig::new(g.p_cur, g.p_traj, g.p_rand)?;
        c.traj_geometric_discount = g.traj_geometric_discount;
        c.validate()?;
        Ok(c)
    }

    pub fn objective(&self) -> Result<Objective> {
        let o: Objective = self.value.objective.parse()?;
        o.validate()?;
        Ok(o)
    }

    pub fn value_spec(&self) -> Result<ValueSpec> {
        match self.value.representation.as_str() {
            "tabular" => Ok(ValueSpec::Tabular),
            "mlp" => Ok(ValueSpec::Mlp {
                hidden: self.value.hidden.clone(),
                features: self.value.features.parse()?,
            }),
            other => Err(Error::Config(format!(
                "value.representation must be tabular or mlp, got {other:?}"
            ))),
        }
    }

    pub fn expectile(&self) -> Result<ExpectileConfig> {
        Ok(ExpectileConfig {
            tau: self.value.tau,
            gamma: self.value.gamma,
            optimizer: optimizer(&self.value.optimizer, self.value.lr)?,
            batch_size: self.value.batch_size,
            terminal_bootstrap_mask: self.value.terminal_bootstrap_mask,
        })
    }

    pub fn awr(&self) -> Result<AwrConfig> {
        let a = AwrConfig {
            beta_h: self.policy.beta_h,
            beta_l: self.policy.beta_l,
            weight_clip: self.policy.weight_clip,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn policy_optimizer(&self) -> OptimizerKind {
        OptimizerKind::adam(self.policy.lr)
    }

    pub fn oracle_k(&self) -> usize {
        self.eval.oracle_k.unwrap_or(self.policy.k)
    }

    /// Copy with a different value objective (used by sweeps).
    pub fn with_objective(&self, objective: Objective) -> Self {
        let mut c = self.clone();
        c.value.objective = objective.to_string();
        c
    }
}

fn optimizer(name: &str, lr: f64) -> Result<OptimizerKind> {
    let kind = match name {
        "adam" => OptimizerKind::adam(lr),
        "sgd" => OptimizerKind::Sgd { lr },
        other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
    };
    kind.validate()?;
    Ok(kind)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = parse_literal(raw.trim());
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override key {key:?} crosses a non-table value"))
            })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
