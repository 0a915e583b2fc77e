use std::sync::Arc;

use super::{Descriptor, Gradient, ValueFunction};
use crate::error::{Error, Result};
use crate::maze::GridMaze;

/// Dense `V(s, g)` table over free-cell indices, stored state-major
/// (`s * N + g`) and initialized to zero.
#[derive(Clone, Debug)]
pub struct TabularValue {
    maze: Arc<GridMaze>,
    n: usize,
    values: Vec<f64>,
}

impl TabularValue {
    pub fn new(maze: Arc<GridMaze>) -> Self {
        let n = maze.num_cells();
        Self {
            maze,
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_params(maze: Arc<GridMaze>, values: Vec<f64>) -> Result<Self> {
        let n = maze.num_cells();
        if values.len() != n * n {
            return Err(Error::Shape(format!(
                "tabular value for {n} cells needs {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite("tabular value", format!("entry {i}")));
        }
        Ok(Self { maze, n, values })
    }

    pub fn num_cells(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn index(&self, s: usize, g: usize) -> usize {
        s * self.n + g
    }

    pub fn get(&self, s: usize, g: usize) -> f64 {
        self.values[self.index(s, g)]
    }

    pub fn set(&mut self, s: usize, g: usize, v: f64) {
        let i = self.index(s, g);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl ValueFunction for TabularValue {
    fn maze(&self) -> &Arc<GridMaze> {
        &self.maze
    }

    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    fn value_with(&self, params: &[f64], s: usize, g: usize) -> f64 {
        params[s * self.n + g]
    }

    fn forward_backward(
        &self,
        states: &[u32],
        goals: &[u32],
        upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> (Vec<f64>, Gradient) {
        let indices: Vec<usize> = states
            .iter()
            .zip(goals)
            .map(|(s, g)| self.index(*s as usize, *g as usize))
            .collect();
        let values: Vec<f64> = indices.iter().map(|i| self.values[*i]).collect();
        let grad = upstream(&values);
        (
            values,
            Gradient::Sparse {
                indices,
                values: grad,
            },
        )
    }

    fn descriptor(&self) -> Descriptor {
        Descriptor::new()
            .with("role", "value")
            .with("kind", "tabular")
            .with("layout", self.maze.layout_id())
            .with("cells", self.n)
    }
}
