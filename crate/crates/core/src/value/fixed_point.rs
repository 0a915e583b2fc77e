use std::sync::Arc;

use super::Objective;
use crate::approx::TabularValue;
use crate::dataset::ValueBatch;
use crate::error::{Error, Result};
use crate::maze::{DistanceTable, GridMaze};

/// Largest maze accepted by [`tabular_fixed_point`].
pub const MAX_FIXED_POINT_CELLS: usize = 2_500;

/// Every `(s, g)` pair once, with the successor an optimal behavior would
/// produce: `min(n, d)` oracle steps toward `g` (so `g` itself when it is
/// within `n`), and `g` for `s = g`.
pub fn exhaustive_batch(maze: &GridMaze, dist: &DistanceTable, n: usize) -> ValueBatch {
    let cells = maze.num_cells();
    let mut batch = ValueBatch::default();
    for s in 0..cells {
        for g in 0..cells {
            let succ = dist.advance(maze, s, g, n);
            batch.push(s as u32, succ as u32, g as u32);
        }
    }
    batch
}

/// Solves `V(s,g) = r(s,g) + discount * max_{s'} V(s',g)` by synchronous
/// value iteration, where `s'` ranges over one-step successors (iql,
/// gamma-scaled) or over the goal-terminated endpoints of every `n`-step
/// action sequence (ota). Stops when a sweep changes no entry by more than
/// `1e-12`.
pub fn tabular_fixed_point(
    maze: Arc<GridMaze>,
    objective: Objective,
    gamma: f64,
) -> Result<TabularValue> {
    objective.validate()?;
    let n = maze.num_cells();
    if n > MAX_FIXED_POINT_CELLS {
        return Err(Error::Config(format!(
            "fixed-point solver supports at most {MAX_FIXED_POINT_CELLS} cells, maze has {n}"
        )));
    }
    let discount = objective.discount(gamma);
    let horizon = objective.horizon();
    let mut v = vec![0.0f64; n * n];
    let mut best = vec![0.0f64; n];
    let mut scratch = vec![0.0f64; n];
    const MAX_SWEEPS: usize = 200_000;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        residual = 0.0;
        let mut next = vec![0.0f64; n * n];
        for g in 0..n {
            let col = |s: usize| v[s * n + g];
            option_max(maze.as_ref(), g, horizon, &col, &mut best, &mut scratch);
            for s in 0..n {
                let r = if s == g { 0.0 } else { -1.0 };
                let x = r + discount * best[s];
                residual = residual.max((x - v[s * n + g]).abs());
                next[s * n + g] = x;
            }
        }
        v = next;
        if residual <= 1e-12 {
            return TabularValue::from_params(maze, v);
        }
    }
    Err(Error::NotConverged {
        what: format!("{objective} fixed point"),
        iterations: MAX_SWEEPS,
        residual,
    })
}

/// `best[s]` = largest `value(e)` over endpoints `e` of `horizon`-step action
/// sequences from `s`, where reaching `g` ends the sequence early.
///
/// `W_0 = value`; `W_k(s) = max over first moves s1 of (value(g) if s1 = g
/// else W_{k-1}(s1))`, with staying put counted as a move.
fn option_max(
    maze: &GridMaze,
    g: usize,
    horizon: usize,
    value: &dyn Fn(usize) -> f64,
    best: &mut [f64],
    scratch: &mut [f64],
) {
    let n = maze.num_cells();
    for (s, b) in best.iter_mut().enumerate() {
        *b = value(s);
    }
    let vg = value(g);
    for _ in 0..horizon {
        for s in 0..n {
            let through = |s1: usize| if s1 == g { vg } else { best[s1] };
            let mut m = through(s);
            for nb in maze.neighbors(s) {
                m = m.max(through(*nb as usize));
            }
            scratch[s] = m;
        }
        best.copy_from_slice(scratch);
    }
}
