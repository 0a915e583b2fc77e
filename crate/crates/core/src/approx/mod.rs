//! Value-function representations (exact tabular tables and small MLPs with
//! reverse-mode gradients), optimizers, target copies and checkpoints.

mod checkpoint;
mod mlp;
mod optim;
mod tabular;

use std::sync::Arc;

pub use checkpoint::{read_checkpoint, write_checkpoint, Descriptor};
pub use mlp::{FeatureSpec, Mlp, MlpValue};
pub use optim::{Optimizer, OptimizerKind, TargetCopy};
pub use tabular::TabularValue;

use crate::error::{Error, Result};
use crate::maze::{CellState, GridMaze};

/// Gradient with respect to a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Gradient {
    Dense(Vec<f64>),
    /// Coordinate/value pairs; repeated indices accumulate.
    Sparse {
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

impl Gradient {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            Gradient::Dense(g) => g.clone(),
            Gradient::Sparse { indices, values } => {
                let mut g = vec![0.0; len];
                for (i, v) in indices.iter().zip(values) {
                    g[*i] += v;
                }
                g
            }
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let values = match self {
            Gradient::Dense(g) => g,
            Gradient::Sparse { values, .. } => values,
        };
        match values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::non_finite(
                "gradient",
                format!("entry {i} is {}", values[i]),
            )),
            None => Ok(()),
        }
    }
}

/// A goal-conditioned value `V(s, g)` over free-cell indices.
///
/// Evaluation takes the parameter vector explicitly so the same model can be
/// read through live or target parameters.
pub trait ValueFunction: Send + Sync {
    fn maze(&self) -> &Arc<GridMaze>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn value_with(&self, params: &[f64], s: usize, g: usize) -> f64;

    fn values_with(&self, params: &[f64], states: &[u32], goals: &[u32]) -> Vec<f64> {
        states
            .iter()
            .zip(goals)
            .map(|(s, g)| self.value_with(params, *s as usize, *g as usize))
            .collect()
    }

    /// Evaluates `V(s_i, g_i)` with the live parameters, asks `upstream` for
    /// `dL/dV_i`, and returns the values and the gradient of `L`.
    fn forward_backward(
        &self,
        states: &[u32],
        goals: &[u32],
        upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> (Vec<f64>, Gradient);

    /// Architecture line stored in checkpoints.
    fn descriptor(&self) -> Descriptor;

    fn value(&self, s: usize, g: usize) -> f64 {
        self.value_with(self.params(), s, g)
    }

    fn evaluate(&self, s: CellState, g: CellState) -> Result<f64> {
        let si = self.maze().require(s)?;
        let gi = self.maze().require(g)?;
        Ok(self.value(si, gi))
    }

    /// Gradient of `upstream * V(s, g)`.
    fn gradient(&self, s: usize, g: usize, upstream: f64) -> Gradient {
        self.forward_backward(&[s as u32], &[g as u32], &mut |_| vec![upstream])
            .1
    }
}

/// Configuration-level choice of value representation.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueSpec {
    Tabular,
    Mlp {
        hidden: Vec<usize>,
        features: FeatureSpec,
    },
}

impl Default for ValueSpec {
    fn default() -> Self {
        ValueSpec::Mlp {
            hidden: vec![256, 256],
            features: FeatureSpec::NormalizedCoords,
        }
    }
}

/// Either value representation behind one concrete type.
#[derive(Clone, Debug)]
pub enum ValueModel {
    Tabular(TabularValue),
    Mlp(MlpValue),
}

impl ValueModel {
    pub fn new<R: rand::Rng + ?Sized>(maze: Arc<GridMaze>, spec: &ValueSpec, rng: &mut R) -> Self {
        match spec {
            ValueSpec::Tabular => ValueModel::Tabular(TabularValue::new(maze)),
            ValueSpec::Mlp { hidden, features } => {
                ValueModel::Mlp(MlpValue::new(maze, *features, hidden, rng))
            }
        }
    }

    /// Rebuilds a model from a checkpoint descriptor and parameters.
    pub fn from_parts(maze: Arc<GridMaze>, desc: &Descriptor, params: Vec<f64>) -> Result<Self> {
        desc.expect("role", "value")?;
        desc.expect("layout", maze.layout_id())?;
        let model = match desc.get("kind") {
            Some("tabular") => ValueModel::Tabular(TabularValue::from_params(maze, params)?),
            Some("mlp") => {
                let features: FeatureSpec = desc.require("features")?.parse()?;
                let sizes = desc.sizes()?;
                let mlp = Mlp::from_params(maze, features, &sizes, params)?;
                ValueModel::Mlp(MlpValue::from_mlp(mlp)?)
            }
            other => {
                return Err(Error::Config(format!("unknown value kind {other:?}")));
            }
        };
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_checkpoint(path, &self.descriptor(), self.params())
    }

    /// Saves with extra descriptor entries (run provenance such as seed and step).
    pub fn save_tagged(&self, path: &std::path::Path, tags: &Descriptor) -> Result<()> {
        let mut desc = self.descriptor();
        desc.extend(tags.clone());
        write_checkpoint(path, &desc, self.params())
    }

    pub fn load(path: &std::path::Path, maze: Arc<GridMaze>) -> Result<Self> {
        let (desc, params) = read_checkpoint(path)?;
        Self::from_parts(maze, &desc, params)
    }

    fn inner(&self) -> &dyn ValueFunction {
        match self {
            ValueModel::Tabular(v) => v,
            ValueModel::Mlp(v) => v,
        }
    }
}

impl ValueFunction for ValueModel {
    fn maze(&self) -> &Arc<GridMaze> {
        self.inner().maze()
    }

    fn params(&self) -> &[f64] {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            ValueModel::Tabular(v) => v.params_mut(),
            ValueModel::Mlp(v) => v.params_mut(),
        }
    }

    fn value_with(&self, params: &[f64], s: usize, g: usize) -> f64 {
        self.inner().value_with(params, s, g)
    }

    fn values_with(&self, params: &[f64], states: &[u32], goals: &[u32]) -> Vec<f64> {
        self.inner().values_with(params, states, goals)
    }

    fn forward_backward(
        &self,
        states: &[u32],
        goals: &[u32],
        upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> (Vec<f64>, Gradient) {
        self.inner().forward_backward(states, goals, upstream)
    }

    fn descriptor(&self) -> Descriptor {
        self.inner().descriptor()
    }
}
