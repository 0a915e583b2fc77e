use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maze::GridMaze;
use crate::policy::HierarchicalAgent;
use crate::rng::{derive, seeded};

/// A fixed start/goal pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalTask {
    pub goal_id: usize,
    pub start: usize,
    pub goal: usize,
    /// Shortest distance from `start` to `goal`.
    pub distance: u32,
}

/// How an agent is scored.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    pub num_goals: usize,
    pub rollouts_per_goal: usize,
    pub checkpoint_fractions: Vec<f64>,
    pub episode_cap: usize,
    pub start_jitter: usize,
}

impl EvalProtocol {
    pub fn for_maze(maze: &GridMaze) -> Self {
        Self {
            num_goals: 5,
            rollouts_per_goal: 50,
            checkpoint_fractions: vec![0.8, 0.9, 1.0],
            episode_cap: maze.episode_cap(),
            start_jitter: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_goals == 0 || self.rollouts_per_goal == 0 || self.episode_cap == 0 {
            return Err(Error::Config("evaluation counts must be positive".into()));
        }
        if self
            .checkpoint_fractions
            .iter()
            .any(|c| !(*c > 0.0 && *c <= 1.0))
        {
            return Err(Error::Config(
                "checkpoint fractions must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// `count` start/goal pairs at least `min_distance` apart, drawn from `seed`
/// alone so every training seed is scored on the same tasks.
pub fn fixed_tasks(
    maze: &GridMaze,
    count: usize,
    min_distance: u32,
    seed: u64,
) -> Result<Vec<EvalTask>> {
    if min_distance > maze.diameter() {
        return Err(Error::Config(format!(
            "task distance {min_distance} exceeds the maze diameter {}",
            maze.diameter()
        )));
    }
    let n = maze.num_cells();
    let mut rng = seeded(seed);
    let mut tasks = Vec::with_capacity(count);
    while tasks.len() < count {
        let goal = rng.gen_range(0..n);
        let field = maze.bfs(goal);
        let far: Vec<usize> = (0..n)
            .filter(|s| field[*s] >= min_distance && *s != goal)
            .collect();
        if far.is_empty() {
            continue;
        }
        let start = far[rng.gen_range(0..far.len())];
        tasks.push(EvalTask {
            goal_id: tasks.len(),
            start,
            goal,
            distance: field[start],
        });
    }
    Ok(tasks)
}

/// One evaluation episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Episode {
    pub checkpoint: f64,
    pub goal_id: usize,
    pub rollout: usize,
    pub success: bool,
    /// Steps until the goal was reached, or the cap on failure.
    pub length: usize,
}

/// Per-episode outcomes with aggregate views.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub episodes: Vec<Episode>,
}

pub const METRICS_CSV_HEADER: &str = "checkpoint,goal_id,rollout,success,episode_len";
pub const SUMMARY_CSV_HEADER: &str = "checkpoint,goal_id,success_rate,mean_episode_len,episodes";

impl MetricsRecord {
    pub fn extend(&mut self, other: MetricsRecord) {
        self.episodes.extend(other.episodes);
    }

    pub fn success_rate(&self) -> f64 {
        rate(self.episodes.iter())
    }

    pub fn mean_length(&self) -> f64 {
        mean_len(self.episodes.iter())
    }

    /// Checkpoint fractions in first-seen order.
    pub fn checkpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.episodes {
            if !out.contains(&e.checkpoint) {
                out.push(e.checkpoint);
            }
        }
        out
    }

    pub fn success_at(&self, checkpoint: f64) -> f64 {
        rate(self.episodes.iter().filter(|e| e.checkpoint == checkpoint))
    }

    pub fn goal_success(&self, goal_id: usize) -> f64 {
        rate(self.episodes.iter().filter(|e| e.goal_id == goal_id))
    }

    /// Rows of `metrics.csv` without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.checkpoint,
                e.goal_id,
                e.rollout,
                u8::from(e.success),
                e.length
            ));
        }
        out
    }

    /// Rows of `summary.csv`: one per checkpoint and goal, one per checkpoint
    /// (`goal_id = all`) and an overall row (`checkpoint = all`).
    pub fn summary_rows(&self) -> String {
        let mut goals: Vec<usize> = self.episodes.iter().map(|e| e.goal_id).collect();
        goals.sort_unstable();
        goals.dedup();
        let mut out = String::new();
        let row = |c: &str, g: &str, eps: Vec<&Episode>| {
            format!(
                "{c},{g},{:.6},{:.3},{}\n",
                rate(eps.iter().copied()),
                mean_len(eps.iter().copied()),
                eps.len()
            )
        };
        for c in self.checkpoints() {
            for g in &goals {
                let eps = self
                    .episodes
                    .iter()
                    .filter(|e| e.checkpoint == c && e.goal_id == *g)
                    .collect();
                out.push_str(&row(&c.to_string(), &g.to_string(), eps));
            }
            let eps = self.episodes.iter().filter(|e| e.checkpoint == c).collect();
            out.push_str(&row(&c.to_string(), "all", eps));
        }
        out.push_str(&row("all", "all", self.episodes.iter().collect()));
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        let (r, l) = (self.success_rate(), self.mean_length());
        if !r.is_finite() || !l.is_finite() {
            return Err(Error::non_finite(
                "evaluation metrics",
                format!("success {r}, length {l}"),
            ));
        }
        Ok(())
    }
}

fn rate<'a>(eps: impl Iterator<Item = &'a Episode>) -> f64 {
    let (mut s, mut n) = (0usize, 0usize);
    for e in eps {
        s += usize::from(e.success);
        n += 1;
    }
    s as f64 / n as f64
}

fn mean_len<'a>(eps: impl Iterator<Item = &'a Episode>) -> f64 {
    let (mut s, mut n) = (0usize, 0usize);
    for e in eps {
        s += e.length;
        n += 1;
    }
    s as f64 / n as f64
}

/// Rolls the agent out `rollouts_per_goal` times on each task. Rollout `r`
/// of goal `i` starts after `start_jitter` random moves and uses a generator
/// derived from a base seed drawn from `rng`, so results do not depend on
/// how rollouts are scheduled across threads.
pub fn evaluate_agent<R: Rng + ?Sized>(
    agent: &HierarchicalAgent,
    tasks: &[EvalTask],
    protocol: &EvalProtocol,
    checkpoint: f64,
    rng: &mut R,
) -> Result<MetricsRecord> {
    protocol.validate()?;
    let maze = agent.maze();
    let base: u64 = rng.gen();
    let jobs: Vec<(usize, usize)> = tasks
        .iter()
        .flat_map(|t| (0..protocol.rollouts_per_goal).map(move |r| (t.goal_id, r)))
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(i, r)| {
            let task = tasks.iter().find(|t| t.goal_id == i).unwrap();
            let mut rng = derive(base, (i as u64) << 32 | r as u64);
            let mut s = task.start;
            for _ in 0..protocol.start_jitter {
                let a = crate::maze::MoveAction::MOVES[rng.gen_range(0..4)];
                s = maze.move_index(s, a);
            }
            let mut ro = agent.rollout(task.goal);
            let mut steps = 0;
            while s != task.goal && steps < protocol.episode_cap {
                let a = ro.act(s, &mut rng);
                s = maze.step_index(s, a, &mut rng).0;
                steps += 1;
            }
            Episode {
                checkpoint,
                goal_id: i,
                rollout: r,
                success: s == task.goal,
                length: steps,
            }
        })
        .collect();
    Ok(MetricsRecord { episodes })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::layouts::bundled;
    use crate::policy::{HighLevel, LowLevel};

    #[test]
    fn oracle_agent_succeeds_in_shortest_time() {
        let maze = Arc::new(bundled("maze-giant").unwrap());
        let tasks = fixed_tasks(&maze, 5, 150, 7).unwrap();
        assert!(tasks.iter().all(|t| t.distance >= 150));
        let agent = HierarchicalAgent::new(
            maze.clone(),
            HighLevel::Oracle { k: 25 },
            LowLevel::OracleGreedy,
            1,
        )
        .unwrap();
        let mut protocol = EvalProtocol::for_maze(&maze);
        protocol.rollouts_per_goal = 3;
        let m = evaluate_agent(&agent, &tasks, &protocol, 1.0, &mut seeded(0)).unwrap();
        assert_eq!(m.success_rate(), 1.0);
        let mean_d = tasks.iter().map(|t| t.distance as f64).sum::<f64>() / 5.0;
        assert!((m.mean_length() - mean_d).abs() < 1e-12);
    }

    #[test]
    fn staying_agent_never_succeeds() {
        use crate::approx::{FeatureSpec, Mlp, OptimizerKind};
        use crate::policy::{LowPolicy, MlpScorer, Scorer};
        let maze = Arc::new(bundled("maze-medium").unwrap());
        let tasks = fixed_tasks(&maze, 2, 10, 1).unwrap();
        // a linear scorer whose only nonzero parameter is the Stay bias
        let mut params = vec![0.0; 6 * 5 + 5];
        params[6 * 5 + 4] = 1.0;
        let net =
            Mlp::from_params(maze.clone(), FeatureSpec::NormalizedCoords, &[6, 5], params).unwrap();
        let low = LowPolicy::new(Scorer::Mlp(MlpScorer::from_net(
            net,
            OptimizerKind::adam(1e-3),
        )))
        .unwrap();
        let agent = HierarchicalAgent::new(
            maze.clone(),
            HighLevel::Oracle { k: 3 },
            LowLevel::Learned(low),
            1,
        )
        .unwrap();
        let protocol = EvalProtocol::for_maze(&maze);
        let m = evaluate_agent(&agent, &tasks, &protocol, 1.0, &mut seeded(2)).unwrap();
        assert_eq!(m.success_rate(), 0.0);
        assert_eq!(m.mean_length(), protocol.episode_cap as f64);
    }

    #[test]
    fn aggregates_are_means_of_episodes() {
        let mut m = MetricsRecord::default();
        for (c, g, s, l) in [
            (0.8, 0, true, 10),
            (0.8, 1, false, 50),
            (1.0, 0, true, 12),
            (1.0, 1, true, 30),
        ] {
            m.episodes.push(Episode {
                checkpoint: c,
                goal_id: g,
                rollout: 0,
                success: s,
                length: l,
            });
        }
        assert_eq!(m.success_rate(), 0.75);
        assert_eq!(m.success_at(0.8), 0.5);
        assert_eq!(m.goal_success(1), 0.5);
        assert_eq!(m.mean_length(), 25.5);
        let summary = m.summary_rows();
        assert!(summary.contains("0.8,all,0.500000,30.000,2\n"));
        assert!(summary.ends_with("all,all,0.750000,25.500,4\n"));
        assert_eq!(m.csv_rows().lines().count(), 4);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let maze = Arc::new(bundled("maze-medium").unwrap());
        let tasks = fixed_tasks(&maze, 3, 20, 4).unwrap();
        assert_eq!(tasks, fixed_tasks(&maze, 3, 20, 4).unwrap());
        let agent = HierarchicalAgent::new(
            maze.clone(),
            HighLevel::Oracle { k: 5 },
            LowLevel::OracleGreedy,
            1,
        )
        .unwrap()
        .stochastic(true);
        let mut protocol = EvalProtocol::for_maze(&maze);
        protocol.start_jitter = 4;
        protocol.rollouts_per_goal = 7;
        let a = evaluate_agent(&agent, &tasks, &protocol, 1.0, &mut seeded(3)).unwrap();
        let b = evaluate_agent(&agent, &tasks, &protocol, 1.0, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
    }
}
