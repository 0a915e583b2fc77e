//! Value-quality instruments: order consistency along optimal trajectories,
//! conversion of values to temporal distances, and value profiles.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::maze::{DistanceTable, GridMaze};
use crate::value::optimal_value;

/// How an optimal trajectory was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySource {
    Oracle,
    Recorded,
}

/// A shortest path `s_0, …, s_T = g` over cell indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptimalTrajectory {
    states: Vec<usize>,
    source: TrajectorySource,
}

impl OptimalTrajectory {
    /// Checks adjacency and strictly decreasing distance to the last state.
    pub fn new(maze: &GridMaze, states: Vec<usize>, source: TrajectorySource) -> Result<Self> {
        let g = *states
            .last()
            .ok_or_else(|| Error::Dataset("empty trajectory".into()))?;
        if states.iter().any(|s| *s >= maze.num_cells()) {
            return Err(Error::Dataset("trajectory leaves the maze".into()));
        }
        let field = maze.bfs(g);
        for (t, w) in states.windows(2).enumerate() {
            if !maze.neighbors(w[0]).contains(&(w[1] as u32)) || field[w[1]] + 1 != field[w[0]] {
                return Err(Error::Dataset(format!(
                    "step {t} from {} to {} is not a shortest-path move",
                    maze.cell(w[0]),
                    maze.cell(w[1])
                )));
            }
        }
        Ok(Self { states, source })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn goal(&self) -> usize {
        *self.states.last().unwrap()
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source(&self) -> TrajectorySource {
        self.source
    }
}

/// Oracle shortest paths for each `(start, goal)` pair.
pub fn collect_optimal_trajectories(
    maze: &GridMaze,
    pairs: &[(usize, usize)],
) -> Result<Vec<OptimalTrajectory>> {
    let mut out = Vec::with_capacity(pairs.len());
    for &(s, g) in pairs {
        if s == g {
            return Err(Error::AtGoal(maze.cell(s)));
        }
        let field = maze.bfs(g);
        let mut states = vec![s];
        let mut cur = s;
        while cur != g {
            cur = crate::maze::descend(maze, &field, cur);
            states.push(cur);
        }
        out.push(OptimalTrajectory {
            states,
            source: TrajectorySource::Oracle,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub ratio: f64,
    pub k: usize,
    /// `V(s_{t+k}, g) > V(s_t, g)` for `t = 0..=T-k`.
    pub flags: Vec<bool>,
    pub trajectory_length: usize,
}

/// Fraction of windows `t = 0..=T-k` with `V(s_{t+k}, g) > V(s_t, g)`
/// (strict), goal fixed to the trajectory's last state.
pub fn order_consistency_ratio(
    value: &dyn Fn(usize, usize) -> f64,
    traj: &OptimalTrajectory,
    k: usize,
) -> Result<ConsistencyReport> {
    let len = traj.len();
    if k == 0 || len < k {
        return Err(Error::TooShort { len, k });
    }
    let g = traj.goal();
    let v: Vec<f64> = traj.states.iter().map(|s| value(*s, g)).collect();
    let flags: Vec<bool> = (0..=len - k).map(|t| v[t + k] > v[t]).collect();
    let hits = flags.iter().filter(|f| **f).count();
    Ok(ConsistencyReport {
        ratio: hits as f64 / flags.len() as f64,
        k,
        flags,
        trajectory_length: len,
    })
}

/// Order-consistency summary over several trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySummary {
    pub reports: Vec<ConsistencyReport>,
    /// Mean of per-trajectory ratios.
    pub mean_ratio: f64,
    /// Consistent windows over all windows, pooled across trajectories.
    pub pooled_ratio: f64,
}

pub fn consistency_summary(
    value: &dyn Fn(usize, usize) -> f64,
    trajs: &[OptimalTrajectory],
    k: usize,
) -> Result<ConsistencySummary> {
    if trajs.is_empty() {
        return Err(Error::Dataset("no trajectories".into()));
    }
    let reports = trajs
        .iter()
        .map(|t| order_consistency_ratio(value, t, k))
        .collect::<Result<Vec<_>>>()?;
    let mean_ratio = reports.iter().map(|r| r.ratio).sum::<f64>() / reports.len() as f64;
    let windows: usize = reports.iter().map(|r| r.flags.len()).sum();
    let hits: usize = reports
        .iter()
        .map(|r| r.flags.iter().filter(|f| **f).count())
        .sum();
    Ok(ConsistencySummary {
        reports,
        mean_ratio,
        pooled_ratio: hits as f64 / windows as f64,
    })
}

/// Fraction of windows whose high-level advantage `V(s_{t+k},g) - V(s_t,g)`
/// is not positive: `1 - mean r^c` over the trajectories.
pub fn advantage_sign_error_rate(
    value: &dyn Fn(usize, usize) -> f64,
    trajs: &[OptimalTrajectory],
    k: usize,
) -> Result<f64> {
    Ok(1.0 - consistency_summary(value, trajs, k)?.mean_ratio)
}

/// Margin above the asymptote below which `1 + (1-gamma) V` is rounding noise.
pub const SATURATION_MARGIN: f64 = 64.0 * f64::EPSILON;

/// A distance estimate; saturated when the value is at the `-1/(1-gamma)`
/// asymptote (within [`SATURATION_MARGIN`]) or below it, in which case
/// `distance` is `+inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalDistance {
    pub distance: f64,
    pub saturated: bool,
}

/// `log(1 + (1-gamma) V) / log(gamma)`, the inverse of [`optimal_value`].
pub fn temporal_distance(value: f64, gamma: f64) -> TemporalDistance {
    let x = (1.0 - gamma) * value;
    if !(1.0 + x > SATURATION_MARGIN) {
        return TemporalDistance {
            distance: f64::INFINITY,
            saturated: true,
        };
    }
    TemporalDistance {
        distance: x.ln_1p() / gamma.ln(),
        saturated: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRecord {
    pub t: usize,
    pub d_star: u32,
    pub v_learned: f64,
    pub d_hat: TemporalDistance,
    pub v_opt: f64,
}

/// Learned versus optimal values along one trajectory, with min-max
/// normalized copies of each series.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueProfile {
    pub records: Vec<ProfileRecord>,
    pub v_learned_norm: Vec<f64>,
    pub v_opt_norm: Vec<f64>,
    pub d_hat_norm: Vec<f64>,
    pub d_star_norm: Vec<f64>,
    /// The learned series is constant (normalized to zeros).
    pub degenerate: bool,
}

/// Min-max normalization over the finite entries; non-finite entries are
/// kept as they are and a constant series maps to zeros.
pub fn min_max_normalize(xs: &[f64]) -> (Vec<f64>, bool) {
    let finite = xs.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        let out = xs
            .iter()
            .map(|x| if x.is_finite() { 0.0 } else { *x })
            .collect();
        return (out, true);
    }
    let out = xs
        .iter()
        .map(|x| {
            if x.is_finite() {
                (x - lo) / (hi - lo)
            } else {
                *x
            }
        })
        .collect();
    (out, false)
}

pub fn value_profile(
    value: &dyn Fn(usize, usize) -> f64,
    maze: &GridMaze,
    traj: &OptimalTrajectory,
    gamma: f64,
) -> ValueProfile {
    let g = traj.goal();
    let field = maze.bfs(g);
    let records: Vec<ProfileRecord> = traj
        .states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let v = value(*s, g);
            ProfileRecord {
                t,
                d_star: field[*s],
                v_learned: v,
                d_hat: temporal_distance(v, gamma),
                v_opt: optimal_value(field[*s], gamma),
            }
        })
        .collect();
    let series =
        |f: &dyn Fn(&ProfileRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let (v_learned_norm, degenerate) = min_max_normalize(&series(&|r| r.v_learned));
    let (v_opt_norm, _) = min_max_normalize(&series(&|r| r.v_opt));
    let (d_hat_norm, _) = min_max_normalize(&series(&|r| r.d_hat.distance));
    let (d_star_norm, _) = min_max_normalize(&series(&|r| f64::from(r.d_star)));
    ValueProfile {
        records,
        v_learned_norm,
        v_opt_norm,
        d_hat_norm,
        d_star_norm,
        degenerate,
    }
}

pub const PROFILE_CSV_HEADER: &str =
    "t,d_star,v_learned,d_hat,v_opt,v_learned_norm,v_opt_norm,d_hat_norm,d_star_norm";

pub const CONSISTENCY_CSV_HEADER: &str = "traj_id,length,k,r_c";

/// Profile rows under [`PROFILE_CSV_HEADER`]; saturated distances print as `inf`.
pub fn profile_csv(profile: &ValueProfile) -> String {
    let mut out = String::from(PROFILE_CSV_HEADER);
    out.push('\n');
    for (i, r) in profile.records.iter().enumerate() {
        writeln!(
            out,
            "{},{},{:.12e},{},{:.12e},{},{},{},{}",
            r.t,
            r.d_star,
            r.v_learned,
            fmt_num(r.d_hat.distance),
            r.v_opt,
            fmt_num(profile.v_learned_norm[i]),
            fmt_num(profile.v_opt_norm[i]),
            fmt_num(profile.d_hat_norm[i]),
            fmt_num(profile.d_star_norm[i]),
        )
        .unwrap();
    }
    out
}

pub fn consistency_csv(summary: &ConsistencySummary) -> String {
    let mut out = String::from(CONSISTENCY_CSV_HEADER);
    out.push('\n');
    for (i, r) in summary.reports.iter().enumerate() {
        writeln!(out, "{i},{},{},{:.6}", r.trajectory_length, r.k, r.ratio).unwrap();
    }
    out
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.9}")
    } else {
        "inf".to_string()
    }
}

/// `V*(s, g)` from a distance table, as a value closure.
pub fn optimal_value_fn<'a>(
    dist: &'a DistanceTable,
    gamma: f64,
) -> impl Fn(usize, usize) -> f64 + 'a {
    move |s, g| optimal_value(dist.get(s, g), gamma)
}
