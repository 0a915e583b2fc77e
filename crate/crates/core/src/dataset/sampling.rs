use rand::Rng;

use super::OfflineDataset;
use crate::error::{Error, Result};
use crate::maze::{CellState, MoveAction};

/// Mixture over the three hindsight goal distributions: the current state,
/// a future state of the same trajectory, or any dataset state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalSamplingConfig {
    pub p_cur: f64,
    pub p_traj: f64,
    pub p_rand: f64,
    /// Geometric decay over future offsets; `None` or `Some(1.0)` samples
    /// future states uniformly.
    pub traj_geometric_discount: Option<f64>,
}

impl Default for GoalSamplingConfig {
    fn default() -> Self {
        Self {
            p_cur: 0.2,
            p_traj: 0.5,
            p_rand: 0.3,
            traj_geometric_discount: None,
        }
    }
}

impl GoalSamplingConfig {
    pub fn new(p_cur: f64, p_traj: f64, p_rand: f64) -> Result<Self> {
        let c = Self {
            p_cur,
            p_traj,
            p_rand,
            traj_geometric_discount: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.p_cur, self.p_traj, self.p_rand];
        if w.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "goal sampling weights {w:?} must be nonnegative and sum to 1"
            )));
        }
        if let Some(d) = self.traj_geometric_discount {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!(
                    "traj_geometric_discount {d} not in (0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Position `t` inside trajectory `traj`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Anchor {
    pub traj: u32,
    pub t: u32,
}

/// Bootstrap samples `(s, successor, g, r)` with `r = -1{s != g}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueBatch {
    pub states: Vec<u32>,
    pub successors: Vec<u32>,
    pub goals: Vec<u32>,
    pub rewards: Vec<f64>,
    /// Dataset positions of the samples; empty for synthetic batches.
    pub anchors: Vec<Anchor>,
}

impl ValueBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: u32, successor: u32, goal: u32) {
        self.states.push(state);
        self.successors.push(successor);
        self.goals.push(goal);
        self.rewards.push(sparse_reward(state, goal));
    }
}

/// The sparse goal-reaching reward `-1{s != g}`.
#[inline]
pub fn sparse_reward(state: u32, goal: u32) -> f64 {
    if state == goal {
        0.0
    } else {
        -1.0
    }
}

/// High-level samples `(s_t, s_{t+k}, g)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HighBatch {
    pub states: Vec<u32>,
    pub subgoals: Vec<u32>,
    pub goals: Vec<u32>,
    pub anchors: Vec<Anchor>,
}

impl HighBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Low-level samples `(s_t, a_t, s_{t+1}, w)` where `w` is `s_{t+k}` (or the
/// final goal for the flat policy).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LowBatch {
    pub states: Vec<u32>,
    pub actions: Vec<MoveAction>,
    pub next_states: Vec<u32>,
    pub subgoals: Vec<u32>,
    pub anchors: Vec<Anchor>,
}

impl LowBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

impl OfflineDataset {
    fn check_batch(&self, batch_size: usize) -> Result<()> {
        if self.total_transitions() == 0 {
            return Err(Error::Dataset("cannot sample from an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Dataset("batch_size must be positive".into()));
        }
        Ok(())
    }

    // `o` indexes s_t in `obs`, `e` the trajectory's final state.
    fn goal_at<R: Rng + ?Sized>(
        &self,
        o: usize,
        e: usize,
        config: &GoalSamplingConfig,
        rng: &mut R,
    ) -> u32 {
        let u: f64 = rng.gen();
        if u < config.p_cur {
            self.obs[o]
        } else if u < config.p_cur + config.p_traj {
            if o >= e {
                return self.obs[e];
            }
            let span = e - o;
            let offset = match config.traj_geometric_discount {
                Some(d) if d < 1.0 => {
                    let v: f64 = rng.gen();
                    // 1 + Geometric(1 - d) by inversion, clipped to the trajectory end
                    let j = 1.0 + ((1.0 - v).ln() / d.ln()).floor();
                    (j as usize).clamp(1, span)
                }
                _ => rng.gen_range(1..=span),
            };
            self.obs[o + offset]
        } else {
            self.obs[rng.gen_range(0..self.obs.len())]
        }
    }

    /// Draws a relabeled goal for the state at `anchor` (which may be the
    /// trajectory's final position).
    pub fn sample_goal<R: Rng + ?Sized>(
        &self,
        anchor: Anchor,
        config: &GoalSamplingConfig,
        rng: &mut R,
    ) -> Result<CellState> {
        let (o, e) = self.obs_range(anchor)?;
        Ok(self.maze.cell(self.goal_at(o, e, config, rng) as usize))
    }

    /// One-step pairs `(s_t, s_{t+1})` with relabeled goals.
    pub fn sample_value_batch<R: Rng + ?Sized>(
        &self,
        config: &GoalSamplingConfig,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<ValueBatch> {
        self.sample_option_batch(config, 1, batch_size, rng)
    }

    /// Pairs `(s_t, s^Ω)` where `s^Ω` is the first occurrence of `g` among
    /// `s_{t+1..=t+n}`, else `s_{t+n}`, clipped to the trajectory end.
    pub fn sample_option_batch<R: Rng + ?Sized>(
        &self,
        config: &GoalSamplingConfig,
        n: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<ValueBatch> {
        self.check_batch(batch_size)?;
        if n == 0 {
            return Err(Error::Config(
                "abstraction factor n must be at least 1".into(),
            ));
        }
        let mut batch = ValueBatch {
            states: Vec::with_capacity(batch_size),
            successors: Vec::with_capacity(batch_size),
            goals: Vec::with_capacity(batch_size),
            rewards: Vec::with_capacity(batch_size),
            anchors: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let j = rng.gen_range(0..self.total_transitions());
            let o = self.pos_obs[j] as usize;
            let e = self.pos_final[j] as usize;
            let g = self.goal_at(o, e, config, rng);
            let horizon = (o + n).min(e);
            let succ = if self.obs[o + 1..=horizon].contains(&g) {
                g
            } else {
                self.obs[horizon]
            };
            batch.push(self.obs[o], succ, g);
            batch.anchors.push(self.anchor_of(j));
        }
        Ok(batch)
    }

    /// `(s_t, s_{t+k}, g)` with `t` drawn first and `g` conditioned on it.
    pub fn sample_high_batch<R: Rng + ?Sized>(
        &self,
        config: &GoalSamplingConfig,
        k: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<HighBatch> {
        self.check_batch(batch_size)?;
        check_k(k)?;
        let mut batch = HighBatch::default();
        for _ in 0..batch_size {
            let j = rng.gen_range(0..self.total_transitions());
            let o = self.pos_obs[j] as usize;
            let e = self.pos_final[j] as usize;
            let g = self.goal_at(o, e, config, rng);
            batch.states.push(self.obs[o]);
            batch.subgoals.push(self.obs[(o + k).min(e)]);
            batch.goals.push(g);
            batch.anchors.push(self.anchor_of(j));
        }
        Ok(batch)
    }

    /// `(s_t, a_t, s_{t+1}, s_{t+k})`.
    pub fn sample_low_batch<R: Rng + ?Sized>(
        &self,
        k: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<LowBatch> {
        self.check_batch(batch_size)?;
        check_k(k)?;
        let mut batch = LowBatch::default();
        for _ in 0..batch_size {
            let j = rng.gen_range(0..self.total_transitions());
            let o = self.pos_obs[j] as usize;
            let e = self.pos_final[j] as usize;
            self.push_low(&mut batch, j, self.obs[(o + k).min(e)]);
        }
        Ok(batch)
    }

    /// `(s_t, a_t, s_{t+1}, g)` for a flat goal-conditioned policy.
    pub fn sample_flat_batch<R: Rng + ?Sized>(
        &self,
        config: &GoalSamplingConfig,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<LowBatch> {
        self.check_batch(batch_size)?;
        let mut batch = LowBatch::default();
        for _ in 0..batch_size {
            let j = rng.gen_range(0..self.total_transitions());
            let o = self.pos_obs[j] as usize;
            let e = self.pos_final[j] as usize;
            let g = self.goal_at(o, e, config, rng);
            self.push_low(&mut batch, j, g);
        }
        Ok(batch)
    }

    fn push_low(&self, batch: &mut LowBatch, j: usize, subgoal: u32) {
        let o = self.pos_obs[j] as usize;
        let anchor = self.anchor_of(j);
        batch.states.push(self.obs[o]);
        batch
            .actions
            .push(self.trajectories[anchor.traj as usize].actions[anchor.t as usize]);
        batch.next_states.push(self.obs[o + 1]);
        batch.subgoals.push(subgoal);
        batch.anchors.push(anchor);
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("subgoal horizon k must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataset::{generate_dataset, BehaviorTag, GenerationConfig, Trajectory};
    use crate::layouts::bundled;
    use crate::maze::GridMaze;
    use crate::rng::seeded;

    /// A single eleven-state trajectory walking east along chain-50 from x = 0.
    fn walk() -> OfflineDataset {
        let maze = Arc::new(bundled("chain-50").unwrap());
        let tr = Trajectory {
            states: (0..=10).collect(),
            actions: vec![MoveAction::East; 10],
            behavior: BehaviorTag::Navigate,
            intended_goal: 10,
        };
        OfflineDataset::new(maze, vec![tr]).unwrap()
    }

    fn small(maze: &str, regime: BehaviorTag, n: usize, seed: u64) -> OfflineDataset {
        let maze = Arc::new(bundled(maze).unwrap());
        let cfg = GenerationConfig::for_regime(&maze, regime, n);
        generate_dataset(maze, &cfg, &mut seeded(seed)).unwrap()
    }

    fn tv(counts: &[u64], reference: &[u64]) -> f64 {
        let a: u64 = counts.iter().sum();
        let b: u64 = reference.iter().sum();
        0.5 * counts
            .iter()
            .zip(reference)
            .map(|(x, y)| (*x as f64 / a as f64 - *y as f64 / b as f64).abs())
            .sum::<f64>()
    }

    #[test]
    fn config_validation() {
        assert!(GoalSamplingConfig::new(0.2, 0.5, 0.3).is_ok());
        assert!(GoalSamplingConfig::new(0.5, 0.5, 0.5).is_err());
        assert!(GoalSamplingConfig::new(-0.1, 0.6, 0.5).is_err());
        let mut c = GoalSamplingConfig::default();
        c.traj_geometric_discount = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn goal_sampling_modes() {
        let ds = walk();
        let mut rng = seeded(4);
        let cur = GoalSamplingConfig::new(1.0, 0.0, 0.0).unwrap();
        let traj = GoalSamplingConfig::new(0.0, 1.0, 0.0).unwrap();
        for t in 0..=10 {
            let a = Anchor { traj: 0, t };
            assert_eq!(ds.sample_goal(a, &cur, &mut rng).unwrap().x, t);
        }
        let last = Anchor { traj: 0, t: 10 };
        assert_eq!(ds.sample_goal(last, &traj, &mut rng).unwrap().x, 10);
        let before_last = Anchor { traj: 0, t: 9 };
        assert_eq!(ds.sample_goal(before_last, &traj, &mut rng).unwrap().x, 10);
        assert!(ds
            .sample_goal(Anchor { traj: 0, t: 11 }, &cur, &mut rng)
            .is_err());
        assert!(ds
            .sample_goal(Anchor { traj: 1, t: 0 }, &cur, &mut rng)
            .is_err());
    }

    #[test]
    fn traj_goals_are_uniform_future_states() {
        let ds = walk();
        let traj = GoalSamplingConfig::new(0.0, 1.0, 0.0).unwrap();
        let mut rng = seeded(5);
        let mut counts = [0u64; 11];
        for _ in 0..70_000 {
            let g = ds
                .sample_goal(Anchor { traj: 0, t: 3 }, &traj, &mut rng)
                .unwrap();
            counts[g.x as usize] += 1;
        }
        assert!(counts[..=3].iter().all(|c| *c == 0));
        let expected = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        assert!(tv(&counts, &expected) < 0.02);
    }

    #[test]
    fn geometric_future_offsets() {
        let ds = walk();
        let mut cfg = GoalSamplingConfig::new(0.0, 1.0, 0.0).unwrap();
        cfg.traj_geometric_discount = Some(0.5);
        let mut rng = seeded(6);
        let mut counts = [0u64; 11];
        for _ in 0..50_000 {
            let g = ds
                .sample_goal(Anchor { traj: 0, t: 0 }, &cfg, &mut rng)
                .unwrap();
            counts[g.x as usize] += 1;
        }
        // P(offset = j) = 0.5^j for j < 10, remainder clipped to the end
        let mut expected = [0.0; 11];
        for (j, e) in expected.iter_mut().enumerate().skip(1) {
            *e = 0.5f64.powi(j as i32);
        }
        expected[10] += 0.5f64.powi(10);
        for j in 1..=4 {
            let p = counts[j] as f64 / 50_000.0;
            assert!((p - expected[j]).abs() < 0.01, "offset {j}: {p}");
        }
    }

    #[test]
    fn random_goals_match_state_marginal() {
        let ds = small("chain-50", BehaviorTag::Navigate, 4000, 7);
        let rand = GoalSamplingConfig::new(0.0, 0.0, 1.0).unwrap();
        let mut rng = seeded(8);
        let mut counts = vec![0u64; 50];
        for i in 0..100_000u32 {
            let a = Anchor { traj: i % 3, t: 0 };
            let g = ds.sample_goal(a, &rand, &mut rng).unwrap();
            counts[g.x as usize] += 1;
        }
        assert!(tv(&counts, &ds.state_counts()) < 0.02);
    }

    #[test]
    fn option_successor_scan() {
        let ds = walk();
        // hand-constructed goals: g = s_6 from t = 3, and a goal off the trajectory
        let check = |t: usize, n: usize, g: u32| -> u32 {
            let horizon = (t + n).min(10);
            if (t + 1..=horizon).any(|i| i as u32 == g) {
                g
            } else {
                horizon as u32
            }
        };
        assert_eq!(check(3, 5, 6), 6);
        assert_eq!(check(8, 5, 40), 10);
        let cfg = GoalSamplingConfig::default();
        let batch = ds
            .sample_option_batch(&cfg, 5, 4000, &mut seeded(9))
            .unwrap();
        for i in 0..batch.len() {
            let t = batch.anchors[i].t as usize;
            assert_eq!(batch.states[i] as usize, t);
            assert_eq!(batch.successors[i], check(t, 5, batch.goals[i]));
            assert_eq!(
                batch.rewards[i],
                sparse_reward(batch.states[i], batch.goals[i])
            );
        }
    }

    #[test]
    fn option_batch_with_n1_is_value_batch() {
        let ds = small("maze-medium", BehaviorTag::Navigate, 5000, 10);
        let cfg = GoalSamplingConfig::default();
        let a = ds.sample_value_batch(&cfg, 512, &mut seeded(11)).unwrap();
        let b = ds
            .sample_option_batch(&cfg, 1, 512, &mut seeded(11))
            .unwrap();
        assert_eq!(a, b);
        assert!(ds.sample_option_batch(&cfg, 0, 8, &mut seeded(1)).is_err());
        assert!(ds.sample_value_batch(&cfg, 0, &mut seeded(1)).is_err());
    }

    /// Exhaustive re-scan of every sampled pair against its source trajectory.
    fn rescan(ds: &OfflineDataset, batch: &ValueBatch, n: usize) {
        for i in 0..batch.len() {
            let a = batch.anchors[i];
            let tr = &ds.trajectories()[a.traj as usize];
            let t = a.t as usize;
            assert_eq!(tr.states[t], batch.states[i]);
            let end = (t + n).min(tr.len());
            let hit = tr.states[t + 1..=end]
                .iter()
                .find(|s| **s == batch.goals[i]);
            let expect = hit.copied().unwrap_or(tr.states[end]);
            assert_eq!(batch.successors[i], expect);
        }
    }

    #[test]
    fn sampled_pairs_follow_trajectories() {
        let ds = small("maze-medium", BehaviorTag::Stitch, 3000, 12);
        let cfg = GoalSamplingConfig::default();
        for n in [1, 3, 10] {
            let batch = ds
                .sample_option_batch(&cfg, n, 2000, &mut seeded(n as u64))
                .unwrap();
            rescan(&ds, &batch, n);
        }
    }

    #[test]
    fn high_and_low_batches_clip() {
        let maze: Arc<GridMaze> = Arc::new(bundled("chain-50").unwrap());
        let short = Trajectory {
            states: vec![0, 1],
            actions: vec![MoveAction::East],
            behavior: BehaviorTag::Stitch,
            intended_goal: 1,
        };
        let ds = OfflineDataset::new(maze, vec![short]).unwrap();
        let low = ds.sample_low_batch(1, 10, &mut seeded(1)).unwrap();
        assert!(low.subgoals.iter().all(|w| *w == 1));
        assert!(low.next_states.iter().all(|w| *w == 1));
        let ds = walk();
        let cfg = GoalSamplingConfig::default();
        let high = ds.sample_high_batch(&cfg, 25, 200, &mut seeded(2)).unwrap();
        assert!(high.subgoals.iter().all(|w| *w == 10));
        let high = ds.sample_high_batch(&cfg, 3, 200, &mut seeded(2)).unwrap();
        for i in 0..high.len() {
            assert_eq!(high.subgoals[i], (high.states[i] + 3).min(10));
        }
        assert!(ds.sample_high_batch(&cfg, 0, 10, &mut seeded(2)).is_err());
        assert!(ds.sample_low_batch(0, 10, &mut seeded(2)).is_err());
    }

    #[test]
    fn positions_are_uniform() {
        let ds = small("chain-50", BehaviorTag::Stitch, 300, 13);
        let low = ds.sample_low_batch(5, 400_000, &mut seeded(14)).unwrap();
        let mut counts = vec![0u64; ds.total_transitions()];
        for a in &low.anchors {
            let base: usize = ds.trajectories()[..a.traj as usize]
                .iter()
                .map(|t| t.len())
                .sum();
            counts[base + a.t as usize] += 1;
        }
        let uniform = vec![1u64; ds.total_transitions()];
        assert!(tv(&counts, &uniform) < 0.02);
    }

    #[test]
    fn traj_goals_never_in_the_past() {
        let ds = small("maze-medium", BehaviorTag::Navigate, 3000, 15);
        let cfg = GoalSamplingConfig::new(0.0, 1.0, 0.0).unwrap();
        let batch = ds
            .sample_high_batch(&cfg, 4, 3000, &mut seeded(16))
            .unwrap();
        for i in 0..batch.len() {
            let a = batch.anchors[i];
            let tr = &ds.trajectories()[a.traj as usize];
            assert!(tr.states[a.t as usize + 1..].contains(&batch.goals[i]));
        }
    }
}
