use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;

use super::{awr_weight, AwrConfig};
use crate::approx::ValueFunction;
use crate::dataset::{GoalSamplingConfig, OfflineDataset};
use crate::error::{Error, Result};

/// The maximizer of the high-level AWR objective over a tabular policy,
/// computed in closed form instead of by gradient steps.
///
/// Under the high-level sampler, `t` is uniform over transitions and `g` is
/// drawn from `p(g | t)`. A policy free to pick any distribution per `(s, g)`
/// maximizes `E[w log pi(s_{t+k} | s_t, g)]` at
///
/// `pi(w | s, g) ∝ sum_{t : s_t = s, s_{t+k} = w} p(g | t) min(exp(beta_h A^h), clip)`,
///
/// which is what a tabular scorer trained by [`super::awr_high_step`]
/// converges to. Rows are built per goal on first use and cached.
pub struct ExtractedHighPolicy {
    dataset: Arc<OfflineDataset>,
    value: Arc<dyn ValueFunction>,
    goals: GoalSamplingConfig,
    k: usize,
    beta: f64,
    clip: f64,
    counts: Vec<u64>,
    cache: Mutex<HashMap<u32, Arc<GoalTable>>>,
}

// Per state: (subgoal, probability) sorted by subgoal. Empty when the state
// never appears as the start of a transition.
struct GoalTable {
    rows: Vec<Vec<(u32, f64)>>,
}

impl std::fmt::Debug for ExtractedHighPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtractedHighPolicy")
            .field("k", &self.k)
            .field("beta", &self.beta)
            .field("clip", &self.clip)
            .finish_non_exhaustive()
    }
}

impl ExtractedHighPolicy {
    pub fn new(
        dataset: Arc<OfflineDataset>,
        value: Arc<dyn ValueFunction>,
        goals: GoalSamplingConfig,
        k: usize,
        config: &AwrConfig,
    ) -> Result<Self> {
        config.validate()?;
        goals.validate()?;
        if k == 0 {
            return Err(Error::Config("subgoal horizon k must be at least 1".into()));
        }
        if value.maze().num_cells() != dataset.maze().num_cells() {
            return Err(Error::Shape(
                "value and dataset disagree on the maze".into(),
            ));
        }
        let counts = dataset.state_counts();
        Ok(Self {
            dataset,
            value,
            goals,
            k,
            beta: config.beta_h,
            clip: config.weight_clip,
            counts,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `pi(. | s, g)` as `(subgoal, probability)` pairs; empty if `s` has no
    /// outgoing transition in the dataset.
    pub fn distribution(&self, s: usize, g: usize) -> Vec<(u32, f64)> {
        self.table(g).rows[s].clone()
    }

    /// Most probable subgoal (smallest index on ties), or `None` when `s`
    /// has no support.
    pub fn best(&self, s: usize, g: usize) -> Option<usize> {
        let table = self.table(g);
        let row = &table.rows[s];
        let mut best: Option<(u32, f64)> = None;
        for (w, p) in row {
            if best.is_none_or(|b| *p > b.1) {
                best = Some((*w, *p));
            }
        }
        best.map(|b| b.0 as usize)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, g: usize, rng: &mut R) -> Option<usize> {
        let table = self.table(g);
        let row = &table.rows[s];
        if row.is_empty() {
            return None;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, p) in row {
            acc += p;
            if u < acc {
                return Some(*w as usize);
            }
        }
        Some(row.last().unwrap().0 as usize)
    }

    fn table(&self, g: usize) -> Arc<GoalTable> {
        if let Some(t) = self.cache.lock().unwrap().get(&(g as u32)) {
            return t.clone();
        }
        let table = Arc::new(self.build(g));
        self.cache
            .lock()
            .unwrap()
            .entry(g as u32)
            .or_insert(table)
            .clone()
    }

    // Probability that the traj component lands on position `p` given anchor
    // `t` in a trajectory whose final index is `e`.
    fn offset_prob(&self, t: usize, p: usize, e: usize) -> f64 {
        let span = e - t;
        let j = p - t;
        match self.goals.traj_geometric_discount {
            Some(d) if d < 1.0 => {
                if j < span {
                    (1.0 - d) * d.powi(j as i32 - 1)
                } else {
                    d.powi(span as i32 - 1)
                }
            }
            _ => 1.0 / span as f64,
        }
    }

    fn build(&self, g: usize) -> GoalTable {
        let n = self.dataset.maze().num_cells();
        let cells: Vec<u32> = (0..n as u32).collect();
        let goal = vec![g as u32; n];
        let v = self.value.values_with(self.value.params(), &cells, &goal);
        let q = self.counts[g] as f64 / self.dataset.num_states() as f64;
        let mut entries: Vec<(u32, u32, f64)> =
            Vec::with_capacity(self.dataset.total_transitions());
        let mut hits = Vec::new();
        for tr in self.dataset.trajectories() {
            let states = &tr.states;
            let e = states.len() - 1;
            hits.clear();
            hits.extend((1..=e).filter(|p| states[*p] as usize == g));
            for t in 0..e {
                let s = states[t];
                let w = states[(t + self.k).min(e)];
                let mut traj = 0.0;
                for &p in hits.iter().filter(|p| **p > t) {
                    traj += self.offset_prob(t, p, e);
                }
                let cur = if s as usize == g { 1.0 } else { 0.0 };
                let prob =
                    self.goals.p_cur * cur + self.goals.p_traj * traj + self.goals.p_rand * q;
                if prob == 0.0 {
                    continue;
                }
                let adv = v[w as usize] - v[s as usize];
                entries.push((s, w, prob * awr_weight(adv, self.beta, self.clip)));
            }
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for (s, w, x) in entries {
            let row = &mut rows[s as usize];
            match row.last_mut() {
                Some(last) if last.0 == w => last.1 += x,
                _ => row.push((w, x)),
            }
        }
        for row in &mut rows {
            let z: f64 = row.iter().map(|e| e.1).sum();
            if z > 0.0 {
                for e in row.iter_mut() {
                    e.1 /= z;
                }
            } else {
                row.clear();
            }
        }
        GoalTable { rows }
    }
}
