//! Offline trajectory datasets: generation under the navigate / stitch /
//! explore regimes, persistence, and relabeled batch sampling.

mod generate;
mod io;
mod sampling;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use generate::{generate_dataset, GenerationConfig};
pub use io::{load_dataset, save_dataset, write_dataset, DatasetHeader};
pub use sampling::{Anchor, GoalSamplingConfig, HighBatch, LowBatch, ValueBatch};

use crate::error::{Error, Result};
use crate::maze::{CellState, GridMaze, MoveAction};

/// Data-collection regime of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BehaviorTag {
    Navigate,
    Stitch,
    Explore,
}

impl BehaviorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorTag::Navigate => "navigate",
            BehaviorTag::Stitch => "stitch",
            BehaviorTag::Explore => "explore",
        }
    }

    /// Behavior noise used when a config does not set one.
    pub fn default_noise(self) -> f64 {
        match self {
            BehaviorTag::Navigate | BehaviorTag::Stitch => 0.2,
            BehaviorTag::Explore => 0.8,
        }
    }
}

impl fmt::Display for BehaviorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "navigate" => Ok(BehaviorTag::Navigate),
            "stitch" => Ok(BehaviorTag::Stitch),
            "explore" => Ok(BehaviorTag::Explore),
            other => Err(Error::Config(format!("unknown dataset regime {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: CellState,
    pub action: MoveAction,
    pub next_state: CellState,
}

/// One recorded episode `s_0, a_0, s_1, …, s_T` over cell indices.
///
/// `actions[t]` is the action the environment executed, so
/// `states[t + 1]` is its deterministic result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<u32>,
    pub actions: Vec<MoveAction>,
    pub behavior: BehaviorTag,
    /// Goal the behavior policy was pursuing (final state for explore).
    pub intended_goal: u32,
}

impl Trajectory {
    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_state(&self) -> u32 {
        *self.states.last().expect("trajectory has states")
    }

    pub fn transitions<'a>(&'a self, maze: &'a GridMaze) -> impl Iterator<Item = Transition> + 'a {
        self.actions
            .iter()
            .enumerate()
            .map(move |(t, a)| Transition {
                state: maze.cell(self.states[t] as usize),
                action: *a,
                next_state: maze.cell(self.states[t + 1] as usize),
            })
    }

    fn validate(&self, maze: &GridMaze) -> Result<()> {
        if self.actions.is_empty() || self.states.len() != self.actions.len() + 1 {
            return Err(Error::Dataset(format!(
                "trajectory has {} states and {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        let n = maze.num_cells() as u32;
        if self.states.iter().any(|s| *s >= n) || self.intended_goal >= n {
            return Err(Error::Dataset("state index outside the maze".into()));
        }
        for (t, a) in self.actions.iter().enumerate() {
            let next = maze.move_index(self.states[t] as usize, *a);
            if next as u32 != self.states[t + 1] {
                return Err(Error::Dataset(format!(
                    "transition {t}: {} --{:?}--> {} is not a maze step",
                    maze.cell(self.states[t] as usize),
                    a,
                    maze.cell(self.states[t + 1] as usize)
                )));
            }
        }
        Ok(())
    }
}

/// An immutable collection of trajectories with flat indices for sampling.
#[derive(Clone, Debug)]
pub struct OfflineDataset {
    maze: Arc<GridMaze>,
    trajectories: Vec<Trajectory>,
    // every stored state s_0..s_T of every trajectory, concatenated
    obs: Vec<u32>,
    // per transition: index into `obs` of s_t and of the trajectory's final state
    pos_obs: Vec<u32>,
    pos_final: Vec<u32>,
    pos_traj: Vec<u32>,
    traj_offset: Vec<u32>,
}

impl OfflineDataset {
    pub fn new(maze: Arc<GridMaze>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Dataset("dataset has no trajectories".into()));
        }
        for tr in &trajectories {
            tr.validate(&maze)?;
        }
        let mut obs = Vec::new();
        let mut pos_obs = Vec::new();
        let mut pos_final = Vec::new();
        let mut pos_traj = Vec::new();
        let mut traj_offset = Vec::with_capacity(trajectories.len());
        for (i, tr) in trajectories.iter().enumerate() {
            let start = obs.len() as u32;
            traj_offset.push(start);
            obs.extend_from_slice(&tr.states);
            let fin = start + tr.len() as u32;
            for t in 0..tr.len() as u32 {
                pos_obs.push(start + t);
                pos_final.push(fin);
                pos_traj.push(i as u32);
            }
        }
        if obs.len() > u32::MAX as usize / 2 {
            return Err(Error::Dataset("dataset too large".into()));
        }
        Ok(Self {
            maze,
            trajectories,
            obs,
            pos_obs,
            pos_final,
            pos_traj,
            traj_offset,
        })
    }

    pub fn maze(&self) -> &Arc<GridMaze> {
        &self.maze
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn total_transitions(&self) -> usize {
        self.pos_obs.len()
    }

    /// Number of stored states (transitions plus one final state per trajectory).
    pub fn num_states(&self) -> usize {
        self.obs.len()
    }

    /// Visit counts per cell over all stored states.
    pub fn state_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.maze.num_cells()];
        for s in &self.obs {
            counts[*s as usize] += 1;
        }
        counts
    }

    pub(crate) fn anchor_of(&self, transition: usize) -> Anchor {
        let traj = self.pos_traj[transition];
        Anchor {
            traj,
            t: self.pos_obs[transition] - self.traj_offset[traj as usize],
        }
    }

    pub(crate) fn obs_range(&self, anchor: Anchor) -> Result<(usize, usize)> {
        let tr = self
            .trajectories
            .get(anchor.traj as usize)
            .ok_or_else(|| Error::Dataset(format!("no trajectory {}", anchor.traj)))?;
        if anchor.t as usize > tr.len() {
            return Err(Error::Dataset(format!(
                "position {} beyond trajectory of length {}",
                anchor.t,
                tr.len()
            )));
        }
        let start = self.traj_offset[anchor.traj as usize] as usize;
        Ok((start + anchor.t as usize, start + tr.len()))
    }
}
