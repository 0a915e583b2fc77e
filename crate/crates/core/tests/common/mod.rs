//! Oracles shared by the integration tests. Nothing here calls into the
//! code paths the oracles are used to check.

#![allow(dead_code)]

use ota_core::approx::{Mlp, ValueFunction};
use ota_core::maze::GridMaze;

/// Breadth-first distances from `origin`, computed over the layout text's
/// wall predicate rather than the maze's neighbor table.
pub fn bfs_by_coords(maze: &GridMaze, origin: usize) -> Vec<u32> {
    let n = maze.num_cells();
    let mut dist = vec![u32::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[origin] = 0;
    queue.push_back(origin);
    while let Some(i) = queue.pop_front() {
        let c = maze.cell(i);
        let cand = [
            (c.x as i64, c.y as i64 - 1),
            (c.x as i64 + 1, c.y as i64),
            (c.x as i64, c.y as i64 + 1),
            (c.x as i64 - 1, c.y as i64),
        ];
        for (x, y) in cand {
            if x < 0 || y < 0 || x >= maze.width() as i64 || y >= maze.height() as i64 {
                continue;
            }
            if maze.is_wall(x as u32, y as u32) {
                continue;
            }
            let j = maze
                .index_of(ota_core::maze::CellState::new(x as u32, y as u32))
                .unwrap();
            if dist[j] == u32::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    dist
}

/// `-(1 - gamma^d) / (1 - gamma)` evaluated as an explicit geometric sum.
pub fn geometric_value(d: u32, gamma: f64) -> f64 {
    let mut v = 0.0;
    let mut p = 1.0;
    for _ in 0..d {
        v -= p;
        p *= gamma;
    }
    v
}

/// Input vector of a normalized-coordinate network, from the cell coordinates.
pub fn coord_features(maze: &GridMaze, s: usize, g: usize) -> Vec<f64> {
    let sx = (maze.width().max(2) - 1) as f64;
    let sy = (maze.height().max(2) - 1) as f64;
    let a = maze.cell(s);
    let b = maze.cell(g);
    vec![
        a.x as f64 / sx,
        a.y as f64 / sy,
        b.x as f64 / sx,
        b.y as f64 / sy,
        b.x as f64 / sx - a.x as f64 / sx,
        b.y as f64 / sy - a.y as f64 / sy,
    ]
}

/// Naive scalar forward pass over a flat parameter vector with layers stored
/// as `in x out` weights followed by biases. Returns each layer's
/// post-activation values (the last layer is linear).
pub fn naive_forward(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
    naive_forward_pre(sizes, params, input).1
}

/// Pre-activations (index 0 is unused) and post-activations of every layer.
fn naive_forward_pre(
    sizes: &[usize],
    params: &[f64],
    input: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut pre = vec![input.to_vec()];
    let mut acts = vec![input.to_vec()];
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        let (fi, fo) = (sizes[l], sizes[l + 1]);
        let z: Vec<f64> = (0..fo)
            .map(|j| unit(params, off, fi, fo, &acts[l], j))
            .collect();
        let relu = l + 2 < sizes.len();
        acts.push(
            z.iter()
                .map(|v| if relu { v.max(0.0) } else { *v })
                .collect(),
        );
        pre.push(z);
        off += fi * fo + fo;
    }
    (pre, acts)
}

fn layer(params: &[f64], off: usize, fi: usize, fo: usize, x: &[f64], relu: bool) -> Vec<f64> {
    (0..fo)
        .map(|j| {
            let z = unit(params, off, fi, fo, x, j);
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

/// Pre-activation of unit `j`.
fn unit(params: &[f64], off: usize, fi: usize, fo: usize, x: &[f64], j: usize) -> f64 {
    let mut z = params[off + fi * fo + j];
    for i in 0..fi {
        z += x[i] * params[off + i * fo + j];
    }
    z
}

/// Output after replacing parameter `idx` by `value`. Only the affected
/// unit is recomputed; the layer after it is updated from its cached
/// pre-activations through the one changed input, later layers are
/// recomputed in full.
fn perturbed_output(
    sizes: &[usize],
    params: &mut [f64],
    pre: &[Vec<f64>],
    acts: &[Vec<f64>],
    idx: usize,
    value: f64,
) -> f64 {
    let depth = sizes.len() - 1;
    let mut off = 0;
    let mut l = 0;
    while idx >= off + sizes[l] * sizes[l + 1] + sizes[l + 1] {
        off += sizes[l] * sizes[l + 1] + sizes[l + 1];
        l += 1;
    }
    let (fi, fo) = (sizes[l], sizes[l + 1]);
    let local = idx - off;
    let j = if local < fi * fo {
        local % fo
    } else {
        local - fi * fo
    };
    let old = params[idx];
    params[idx] = value;
    let z = unit(params, off, fi, fo, &acts[l], j);
    params[idx] = old;
    let xj = if l + 1 < depth { z.max(0.0) } else { z };
    if l + 1 == depth {
        return xj;
    }
    let delta = xj - acts[l + 1][j];
    let m = l + 1;
    let o = off + fi * fo + fo;
    let (a, b) = (sizes[m], sizes[m + 1]);
    let mut x: Vec<f64> = (0..b)
        .map(|q| {
            let z = pre[m + 1][q] + delta * params[o + j * b + q];
            if m + 1 < depth {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect();
    let mut o = o + a * b + b;
    for m in m + 1..depth {
        let (a, b) = (sizes[m], sizes[m + 1]);
        x = layer(params, o, a, b, &x, m + 1 < depth);
        o += a * b + b;
    }
    x[0]
}

/// Largest per-coordinate relative error between the reverse-mode gradient
/// of `V(s, g)` and central differences with step `h`. The relative error
/// uses `max(|a|, |b|, floor)` as denominator.
pub fn gradcheck(
    net: &Mlp,
    value: &dyn ValueFunction,
    s: usize,
    g: usize,
    h: f64,
    floor: f64,
) -> (f64, usize) {
    let sizes = net.sizes().to_vec();
    let input = coord_features(net.maze(), s, g);
    let mut params = net.params().to_vec();
    let (pre, acts) = naive_forward_pre(&sizes, &params, &input);
    let analytic = value.gradient(s, g, 1.0).to_dense(params.len());
    let mut worst = (0.0f64, 0usize);
    for idx in 0..params.len() {
        let p = params[idx];
        let up = perturbed_output(&sizes, &mut params, &pre, &acts, idx, p + h);
        let down = perturbed_output(&sizes, &mut params, &pre, &acts, idx, p - h);
        let fd = (up - down) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        if rel > worst.0 {
            worst = (rel, idx);
        }
    }
    worst
}
