use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;

use super::{ExtractedHighPolicy, HighPolicy, LowPolicy};
use crate::error::{Error, Result};
use crate::maze::{descend, GridMaze, MoveAction};

/// Source of subgoals.
#[derive(Debug)]
pub enum HighLevel {
    Learned(HighPolicy),
    Extracted(ExtractedHighPolicy),
    /// The cell `k` steps along a shortest path to the goal.
    Oracle {
        k: usize,
    },
}

/// Source of primitive actions toward a subgoal.
#[derive(Debug)]
pub enum LowLevel {
    Learned(LowPolicy),
    /// First shortest-path move toward the subgoal (N, E, S, W tie order).
    OracleGreedy,
}

/// Lazily computed BFS distance fields, keyed by target cell.
#[derive(Debug)]
pub struct FieldCache {
    maze: Arc<GridMaze>,
    fields: Mutex<HashMap<u32, Arc<Vec<u32>>>>,
}

// bound on cached fields before the cache is flushed
const FIELD_CACHE_LIMIT: usize = 4096;

impl FieldCache {
    pub fn new(maze: Arc<GridMaze>) -> Self {
        Self {
            maze,
            fields: Mutex::new(HashMap::new()),
        }
    }

    pub fn field(&self, target: usize) -> Arc<Vec<u32>> {
        if let Some(f) = self.fields.lock().unwrap().get(&(target as u32)) {
            return f.clone();
        }
        let f = Arc::new(self.maze.bfs(target));
        let mut map = self.fields.lock().unwrap();
        if map.len() >= FIELD_CACHE_LIMIT {
            map.clear();
        }
        map.entry(target as u32).or_insert(f).clone()
    }

    /// Cell reached after `k` shortest-path moves from `s` toward `g`.
    pub fn advance(&self, s: usize, g: usize, k: usize) -> usize {
        let field = self.field(g);
        let mut cur = s;
        for _ in 0..k {
            if cur == g {
                break;
            }
            cur = descend(&self.maze, &field, cur);
        }
        cur
    }

    /// First shortest-path action from `s` toward `target` (Stay at the target).
    pub fn greedy_action(&self, s: usize, target: usize) -> MoveAction {
        if s == target {
            return MoveAction::Stay;
        }
        let field = self.field(target);
        let next = descend(&self.maze, &field, s);
        MoveAction::MOVES
            .into_iter()
            .find(|a| self.maze.move_index(s, *a) == next)
            .expect("descent target is a neighbor")
    }
}

/// `pi = pi^l ∘ pi^h`: a subgoal source composed with an action source.
#[derive(Debug)]
pub struct HierarchicalAgent {
    maze: Arc<GridMaze>,
    pub high: HighLevel,
    pub low: LowLevel,
    replan_interval: usize,
    sample_high: bool,
    sample_low: bool,
    fields: FieldCache,
}

impl HierarchicalAgent {
    pub fn new(
        maze: Arc<GridMaze>,
        high: HighLevel,
        low: LowLevel,
        replan_interval: usize,
    ) -> Result<Self> {
        if replan_interval == 0 {
            return Err(Error::Config("replan_interval must be at least 1".into()));
        }
        if let HighLevel::Oracle { k: 0 } = high {
            return Err(Error::Config(
                "oracle subgoal horizon must be at least 1".into(),
            ));
        }
        Ok(Self {
            fields: FieldCache::new(maze.clone()),
            maze,
            high,
            low,
            replan_interval,
            sample_high: false,
            sample_low: false,
        })
    }

    /// Sample from both levels instead of acting by argmax.
    pub fn stochastic(self, on: bool) -> Self {
        self.sampling(on, on)
    }

    /// Chooses per level between sampling and argmax. A deterministic low
    /// level that errs at some cell repeats the error on every visit, so
    /// one wrong action can trap an episode in a cycle.
    pub fn sampling(mut self, high: bool, low: bool) -> Self {
        self.sample_high = high;
        self.sample_low = low;
        self
    }

    pub fn maze(&self) -> &Arc<GridMaze> {
        &self.maze
    }

    pub fn replan_interval(&self) -> usize {
        self.replan_interval
    }

    /// Subgoal for `(s, g)`. States without support in an extracted policy
    /// fall back to the goal itself.
    pub fn subgoal<R: Rng + ?Sized>(&self, s: usize, g: usize, rng: &mut R) -> usize {
        match &self.high {
            HighLevel::Oracle { k } => self.fields.advance(s, g, *k),
            HighLevel::Learned(p) if self.sample_high => sample_index(&p.distribution(s, g), rng),
            HighLevel::Learned(p) => p.best(s, g),
            HighLevel::Extracted(p) if self.sample_high => p.sample(s, g, rng).unwrap_or(g),
            HighLevel::Extracted(p) => p.best(s, g).unwrap_or(g),
        }
    }

    pub fn low_action<R: Rng + ?Sized>(&self, s: usize, w: usize, rng: &mut R) -> MoveAction {
        match &self.low {
            LowLevel::OracleGreedy => self.fields.greedy_action(s, w),
            LowLevel::Learned(p) if self.sample_low => {
                MoveAction::ALL[sample_index(&p.distribution(s, w), rng)]
            }
            LowLevel::Learned(p) => p.best(s, w),
        }
    }

    /// Action with a fresh subgoal (replanning at this step).
    pub fn act<R: Rng + ?Sized>(&self, s: usize, g: usize, rng: &mut R) -> MoveAction {
        if s == g {
            return MoveAction::Stay;
        }
        let w = self.subgoal(s, g, rng);
        self.low_action(s, w, rng)
    }

    /// Starts an episode toward `g` that replans every `replan_interval` steps.
    pub fn rollout(&self, g: usize) -> Rollout<'_> {
        Rollout {
            agent: self,
            goal: g,
            subgoal: None,
            since: 0,
        }
    }
}

/// Per-episode planning state of a [`HierarchicalAgent`].
#[derive(Debug)]
pub struct Rollout<'a> {
    agent: &'a HierarchicalAgent,
    goal: usize,
    subgoal: Option<usize>,
    since: usize,
}

impl Rollout<'_> {
    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn current_subgoal(&self) -> Option<usize> {
        self.subgoal
    }

    pub fn act<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) -> MoveAction {
        if s == self.goal {
            return MoveAction::Stay;
        }
        let w = match self.subgoal {
            Some(w) if self.since < self.agent.replan_interval => w,
            _ => {
                self.since = 0;
                self.agent.subgoal(s, self.goal, rng)
            }
        };
        self.subgoal = Some(w);
        self.since += 1;
        self.agent.low_action(s, w, rng)
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
