use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{Descriptor, Gradient, ValueFunction};
use crate::error::{Error, Result};
use crate::maze::GridMaze;

/// Input encoding of a cell pair `(s, g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSpec {
    /// Concatenated one-hot vectors of `s` and `g` (dimension `2N`).
    OnehotPair,
    /// `(x, y, gx, gy, gx - x, gy - y)` with coordinates scaled to `[0, 1]`.
    NormalizedCoords,
}

impl FeatureSpec {
    pub fn dim(self, maze: &GridMaze) -> usize {
        match self {
            FeatureSpec::OnehotPair => 2 * maze.num_cells(),
            FeatureSpec::NormalizedCoords => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSpec::OnehotPair => "onehot-pair",
            FeatureSpec::NormalizedCoords => "normalized-coords",
        }
    }

    /// Dense encoding of one pair.
    pub fn encode(self, maze: &GridMaze, s: usize, g: usize) -> Vec<f64> {
        match self {
            FeatureSpec::OnehotPair => {
                let n = maze.num_cells();
                let mut v = vec![0.0; 2 * n];
                v[s] = 1.0;
                v[n + g] = 1.0;
                v
            }
            FeatureSpec::NormalizedCoords => {
                let sx = f64::from(maze.width().saturating_sub(1).max(1));
                let sy = f64::from(maze.height().saturating_sub(1).max(1));
                let a = maze.cell(s);
                let b = maze.cell(g);
                let (x, y) = (f64::from(a.x) / sx, f64::from(a.y) / sy);
                let (gx, gy) = (f64::from(b.x) / sx, f64::from(b.y) / sy);
                vec![x, y, gx, gy, gx - x, gy - y]
            }
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onehot-pair" => Ok(FeatureSpec::OnehotPair),
            "normalized-coords" => Ok(FeatureSpec::NormalizedCoords),
            other => Err(Error::Config(format!("unknown feature encoding {other:?}"))),
        }
    }
}

/// Fully connected network on cell pairs: rectifier hidden layers, linear
/// output. Layer `l` stores its weights as an `in x out` row-major block
/// followed by `out` biases.
#[derive(Clone, Debug)]
pub struct Mlp {
    maze: Arc<GridMaze>,
    features: FeatureSpec,
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Per-layer activations kept for the backward pass.
struct Cache {
    input: Option<Array2<f64>>,
    // post-activation outputs of every layer (the last one is linear)
    acts: Vec<Array2<f64>>,
}

impl Mlp {
    /// Random initialization: weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(
        maze: Arc<GridMaze>,
        features: FeatureSpec,
        hidden: &[usize],
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![features.dim(&maze)];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let offsets = layer_offsets(&sizes);
        let mut params = vec![0.0; *offsets.last().unwrap()];
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            // one-hot inputs have two active units
            let eff_in = match (l, features) {
                (0, FeatureSpec::OnehotPair) => 2,
                _ => fan_in,
            };
            let bound = 1.0 / (eff_in as f64).sqrt();
            for w in &mut params[offsets[l]..offsets[l] + fan_in * fan_out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Self {
            maze,
            features,
            sizes,
            params,
            offsets,
        }
    }

    pub fn from_params(
        maze: Arc<GridMaze>,
        features: FeatureSpec,
        sizes: &[usize],
        params: Vec<f64>,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        if sizes[0] != features.dim(&maze) {
            return Err(Error::Shape(format!(
                "{features} encoding has dimension {}, first layer is {}",
                features.dim(&maze),
                sizes[0]
            )));
        }
        let offsets = layer_offsets(sizes);
        if params.len() != *offsets.last().unwrap() {
            return Err(Error::Shape(format!(
                "architecture {sizes:?} has {} parameters, got {}",
                offsets.last().unwrap(),
                params.len()
            )));
        }
        Ok(Self {
            maze,
            features,
            sizes: sizes.to_vec(),
            params,
            offsets,
        })
    }

    pub fn maze(&self) -> &Arc<GridMaze> {
        &self.maze
    }

    pub fn features(&self) -> FeatureSpec {
        self.features
    }

    /// Layer widths including input and output.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Range of layer `l`'s weight block in the flat parameter vector.
    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l] + self.sizes[l] * self.sizes[l + 1]
    }

    /// Range of layer `l`'s biases.
    pub fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let w = self.weight_range(l);
        w.end..w.end + self.sizes[l + 1]
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let w = ArrayView2::from_shape(
            (self.sizes[l], self.sizes[l + 1]),
            &params[self.weight_range(l)],
        )
        .expect("layer shape");
        let b = ArrayView1::from(&params[self.bias_range(l)]);
        (w, b)
    }

    fn forward_cached(&self, params: &[f64], states: &[u32], goals: &[u32]) -> Cache {
        assert_eq!(states.len(), goals.len());
        let batch = states.len();
        let depth = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(depth);
        let (w0, b0) = self.layer(params, 0);
        let (input, mut z) = match self.features {
            FeatureSpec::OnehotPair => {
                let n = self.maze.num_cells();
                let mut z = Array2::zeros((batch, self.sizes[1]));
                for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
                    row.assign(&b0);
                    row += &w0.row(states[i] as usize);
                    row += &w0.row(n + goals[i] as usize);
                }
                (None, z)
            }
            FeatureSpec::NormalizedCoords => {
                let mut x = Array2::zeros((batch, self.sizes[0]));
                for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
                    let f = self
                        .features
                        .encode(&self.maze, states[i] as usize, goals[i] as usize);
                    row.assign(&Array1::from(f));
                }
                let z = x.dot(&w0) + &b0;
                (Some(x), z)
            }
        };
        for l in 0..depth {
            if l > 0 {
                let (w, b) = self.layer(params, l);
                z = acts.last().map(|a: &Array2<f64>| a.dot(&w)).unwrap() + &b;
            }
            if l + 1 < depth {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z.clone());
        }
        Cache { input, acts }
    }

    /// Outputs for a batch of pairs, shape `batch x outputs`.
    pub fn forward_with(&self, params: &[f64], states: &[u32], goals: &[u32]) -> Array2<f64> {
        self.forward_cached(params, states, goals)
            .acts
            .pop()
            .unwrap()
    }

    pub fn forward(&self, states: &[u32], goals: &[u32]) -> Array2<f64> {
        self.forward_with(&self.params, states, goals)
    }

    /// Runs the network, asks `upstream` for `dL/d output` and returns the
    /// outputs with the dense parameter gradient of `L`.
    pub fn forward_backward(
        &self,
        states: &[u32],
        goals: &[u32],
        upstream: &mut dyn FnMut(&Array2<f64>) -> Array2<f64>,
    ) -> (Array2<f64>, Vec<f64>) {
        let mut cache = self.forward_cached(&self.params, states, goals);
        let out = cache.acts.last().unwrap().clone();
        let mut delta = upstream(&out);
        assert_eq!(delta.dim(), out.dim(), "upstream gradient shape");
        let mut grad = vec![0.0; self.params.len()];
        let depth = self.sizes.len() - 1;
        for l in (0..depth).rev() {
            if l + 1 < depth {
                // rectifier derivative, read from the stored activation
                ndarray::Zip::from(&mut delta)
                    .and(&cache.acts[l])
                    .for_each(|d, a| {
                        if *a <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            let gb = delta.sum_axis(Axis(0));
            grad[self.bias_range(l)].copy_from_slice(gb.as_slice().unwrap());
            let wr = self.weight_range(l);
            if l == 0 {
                match &cache.input {
                    Some(x) => {
                        let gw = x.t().dot(&delta);
                        grad[wr].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
                    }
                    None => {
                        let n = self.maze.num_cells();
                        let width = self.sizes[1];
                        let gw = &mut grad[wr];
                        for (i, row) in delta.axis_iter(Axis(0)).enumerate() {
                            for idx in [states[i] as usize, n + goals[i] as usize] {
                                let dst = &mut gw[idx * width..(idx + 1) * width];
                                for (d, v) in dst.iter_mut().zip(row.iter()) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
            } else {
                let prev = &cache.acts[l - 1];
                let gw = prev.t().dot(&delta);
                grad[wr].copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
                let (w, _) = self.layer(&self.params, l);
                delta = delta.dot(&w.t());
            }
        }
        cache.acts.clear();
        (out, grad)
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor::new()
            .with("kind", "mlp")
            .with("layout", self.maze.layout_id())
            .with("features", self.features)
            .with(
                "sizes",
                self.sizes
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            )
    }
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0];
    for l in 0..sizes.len() - 1 {
        let last = *offsets.last().unwrap();
        offsets.push(last + sizes[l] * sizes[l + 1] + sizes[l + 1]);
    }
    offsets
}

/// Scalar-output [`Mlp`] used as a value function.
#[derive(Clone, Debug)]
pub struct MlpValue {
    net: Mlp,
}

impl MlpValue {
    pub fn new<R: Rng + ?Sized>(
        maze: Arc<GridMaze>,
        features: FeatureSpec,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        Self {
            net: Mlp::new(maze, features, hidden, 1, rng),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.outputs() != 1 {
            return Err(Error::Shape(format!(
                "value network must have one output, has {}",
                net.outputs()
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl ValueFunction for MlpValue {
    fn maze(&self) -> &Arc<GridMaze> {
        &self.net.maze
    }

    fn params(&self) -> &[f64] {
        &self.net.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.net.params
    }

    fn value_with(&self, params: &[f64], s: usize, g: usize) -> f64 {
        self.net.forward_with(params, &[s as u32], &[g as u32])[[0, 0]]
    }

    fn values_with(&self, params: &[f64], states: &[u32], goals: &[u32]) -> Vec<f64> {
        self.net
            .forward_with(params, states, goals)
            .slice(s![.., 0])
            .to_vec()
    }

    fn forward_backward(
        &self,
        states: &[u32],
        goals: &[u32],
        upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> (Vec<f64>, Gradient) {
        let (out, grad) = self.net.forward_backward(states, goals, &mut |out| {
            let v = out.slice(s![.., 0]).to_vec();
            let d = upstream(&v);
            Array2::from_shape_vec((d.len(), 1), d).expect("upstream length")
        });
        (out.slice(s![.., 0]).to_vec(), Gradient::Dense(grad))
    }

    fn descriptor(&self) -> Descriptor {
        let mut d = Descriptor::new().with("role", "value");
        d.extend(self.net.descriptor());
        d
    }
}
