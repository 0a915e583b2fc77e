use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::approx::{Descriptor, FeatureSpec, Mlp, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::maze::GridMaze;

/// Categorical scores over `num_classes` outcomes conditioned on a cell pair
/// `(s, c)`.
#[derive(Clone, Debug)]
pub enum Scorer {
    Tabular(TabularScorer),
    Mlp(MlpScorer),
}

impl Scorer {
    pub fn num_classes(&self) -> usize {
        match self {
            Scorer::Tabular(t) => t.classes,
            Scorer::Mlp(m) => m.net.outputs(),
        }
    }

    pub fn logits(&self, s: usize, c: usize) -> Vec<f64> {
        match self {
            Scorer::Tabular(t) => t.logits(s, c),
            Scorer::Mlp(m) => {
                m.net
                    .forward(&[s as u32], &[c as u32])
                    .into_raw_vec_and_offset()
                    .0
            }
        }
    }

    /// One gradient step increasing `(1/B) sum_i w_i log p(y_i | s_i, c_i)`.
    /// Returns the weighted negative log-likelihood before the step.
    pub fn weighted_step(
        &mut self,
        states: &[u32],
        conds: &[u32],
        labels: &[u32],
        weights: &[f64],
    ) -> Result<f64> {
        let b = states.len();
        if b == 0 || conds.len() != b || labels.len() != b || weights.len() != b {
            return Err(Error::Shape("policy batch columns differ in length".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::non_finite("policy weights", format!("weight {w}")));
        }
        let classes = self.num_classes();
        if let Some(y) = labels.iter().find(|y| **y as usize >= classes) {
            return Err(Error::Shape(format!("label {y} outside {classes} classes")));
        }
        match self {
            Scorer::Tabular(t) => t.step(states, conds, labels, weights),
            Scorer::Mlp(m) => m.step(states, conds, labels, weights),
        }
    }

    pub fn descriptor(&self) -> Descriptor {
        match self {
            Scorer::Tabular(t) => Descriptor::new()
                .with("kind", "tabular")
                .with("classes", t.classes)
                .with("rows", t.rows.len()),
            Scorer::Mlp(m) => m.net.descriptor(),
        }
    }

    /// Flat parameter vector for checkpoints. Tabular rows are written in
    /// sorted key order as `s, c, rest, m, (class, logit) x m`.
    pub fn to_params(&self) -> Vec<f64> {
        match self {
            Scorer::Mlp(m) => m.net.params().to_vec(),
            Scorer::Tabular(t) => {
                let mut keys: Vec<_> = t.rows.keys().copied().collect();
                keys.sort_unstable();
                let mut out = Vec::new();
                for k in keys {
                    let row = &t.rows[&k];
                    out.extend([
                        f64::from(k.0),
                        f64::from(k.1),
                        row.rest,
                        row.entries.len() as f64,
                    ]);
                    for (c, l) in &row.entries {
                        out.extend([f64::from(*c), *l]);
                    }
                }
                out
            }
        }
    }

    pub fn from_parts(
        maze: Arc<GridMaze>,
        desc: &Descriptor,
        params: Vec<f64>,
        lr: OptimizerKind,
    ) -> Result<Self> {
        match desc.get("kind") {
            Some("mlp") => {
                let features: FeatureSpec = desc.require("features")?.parse()?;
                let net = Mlp::from_params(maze, features, &desc.sizes()?, params)?;
                Ok(Scorer::Mlp(MlpScorer::from_net(net, lr)))
            }
            Some("tabular") => {
                let classes: usize = desc
                    .require("classes")?
                    .parse()
                    .map_err(|_| Error::Config("bad class count".into()))?;
                let sgd = match lr {
                    OptimizerKind::Sgd { lr } => lr,
                    OptimizerKind::Adam { lr, .. } => lr,
                };
                let mut t = TabularScorer::new(classes, sgd);
                let mut i = 0;
                let bad = || Error::Shape("truncated tabular policy parameters".into());
                while i < params.len() {
                    let head = params.get(i..i + 4).ok_or_else(bad)?;
                    let m = head[3] as usize;
                    let body = params.get(i + 4..i + 4 + 2 * m).ok_or_else(bad)?;
                    let entries = body.chunks_exact(2).map(|p| (p[0] as u32, p[1])).collect();
                    t.rows.insert(
                        (head[0] as u32, head[1] as u32),
                        Row {
                            entries,
                            rest: head[2],
                        },
                    );
                    i += 4 + 2 * m;
                }
                Ok(Scorer::Tabular(t))
            }
            other => Err(Error::Config(format!(
                "unknown policy scorer kind {other:?}"
            ))),
        }
    }
}

/// Lazily allocated logit rows keyed by `(s, c)`. A row stores logits for the
/// classes it has been trained on and one shared logit for all others, so
/// its softmax is exactly that of a full table whose untouched entries are
/// equal. Rows start at all-zero logits (uniform).
#[derive(Clone, Debug)]
pub struct TabularScorer {
    classes: usize,
    lr: f64,
    rows: HashMap<(u32, u32), Row>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Row {
    entries: Vec<(u32, f64)>,
    rest: f64,
}

impl Row {
    /// Log-normalizer over all `classes`.
    fn log_z(&self, classes: usize) -> f64 {
        let m = self.entries.len();
        let top = self.entries.iter().map(|e| e.1).fold(
            if m < classes {
                self.rest
            } else {
                f64::NEG_INFINITY
            },
            f64::max,
        );
        let mut z: f64 = self.entries.iter().map(|e| (e.1 - top).exp()).sum();
        z += (classes - m) as f64 * (self.rest - top).exp();
        top + z.ln()
    }
}

impl TabularScorer {
    /// `lr` is the step size on the batch-mean objective.
    pub fn new(classes: usize, lr: f64) -> Self {
        Self {
            classes,
            lr,
            rows: HashMap::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    fn logits(&self, s: usize, c: usize) -> Vec<f64> {
        match self.rows.get(&(s as u32, c as u32)) {
            None => vec![0.0; self.classes],
            Some(row) => {
                let mut out = vec![row.rest; self.classes];
                for (k, l) in &row.entries {
                    out[*k as usize] = *l;
                }
                out
            }
        }
    }

    fn step(
        &mut self,
        states: &[u32],
        conds: &[u32],
        labels: &[u32],
        weights: &[f64],
    ) -> Result<f64> {
        let scale = 1.0 / states.len() as f64;
        let mut nll = 0.0;
        // gradients are taken at the pre-step logits of every row
        let mut grads: Vec<((u32, u32), u32, f64)> = Vec::with_capacity(states.len());
        for i in 0..states.len() {
            let key = (states[i], conds[i]);
            let row = self.rows.get(&key);
            let lp = match row {
                None => -(self.classes as f64).ln(),
                Some(r) => {
                    let l = r
                        .entries
                        .iter()
                        .find(|e| e.0 == labels[i])
                        .map_or(r.rest, |e| e.1);
                    l - r.log_z(self.classes)
                }
            };
            nll -= weights[i] * lp * scale;
            grads.push((key, labels[i], weights[i] * scale));
        }
        // snapshot probabilities before applying any update
        let mut updates: Vec<((u32, u32), Vec<(u32, f64)>, f64)> = Vec::with_capacity(grads.len());
        for (key, y, w) in grads {
            let row = self.rows.get(&key).cloned().unwrap_or_default();
            let log_z = row.log_z(self.classes);
            let mut deltas: Vec<(u32, f64)> = row
                .entries
                .iter()
                .map(|(c, l)| (*c, -w * (l - log_z).exp()))
                .collect();
            match deltas.iter_mut().find(|d| d.0 == y) {
                Some(d) => d.1 += w,
                None => deltas.push((y, w * (1.0 - (row.rest - log_z).exp()))),
            }
            let rest_delta = -w * (row.rest - log_z).exp();
            updates.push((key, deltas, rest_delta));
        }
        for (key, deltas, rest_delta) in updates {
            let row = self.rows.entry(key).or_default();
            let rest_before = row.rest;
            // classes absent from `deltas` were part of the shared logit when
            // the gradient was taken
            for e in row.entries.iter_mut() {
                let d = deltas
                    .iter()
                    .find(|d| d.0 == e.0)
                    .map_or(rest_delta, |d| d.1);
                e.1 += self.lr * d;
            }
            for (c, d) in deltas {
                if !row.entries.iter().any(|e| e.0 == c) {
                    row.entries.push((c, rest_before + self.lr * d));
                }
            }
            row.rest += self.lr * rest_delta;
        }
        if !nll.is_finite() {
            return Err(Error::non_finite("policy loss", format!("{nll}")));
        }
        Ok(nll)
    }
}

/// Multi-output [`Mlp`] scorer trained with its own optimizer.
#[derive(Clone, Debug)]
pub struct MlpScorer {
    net: Mlp,
    optimizer: Optimizer,
}

impl MlpScorer {
    pub fn new<R: Rng + ?Sized>(
        maze: Arc<GridMaze>,
        features: FeatureSpec,
        hidden: &[usize],
        classes: usize,
        optimizer: OptimizerKind,
        rng: &mut R,
    ) -> Self {
        let net = Mlp::new(maze, features, hidden, classes, rng);
        Self::from_net(net, optimizer)
    }

    pub fn from_net(net: Mlp, optimizer: OptimizerKind) -> Self {
        let optimizer = Optimizer::new(optimizer, net.num_params());
        Self { net, optimizer }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn step(
        &mut self,
        states: &[u32],
        conds: &[u32],
        labels: &[u32],
        weights: &[f64],
    ) -> Result<f64> {
        let scale = 1.0 / states.len() as f64;
        let mut nll = 0.0;
        let (_, grad) = self
            .net
            .forward_backward(states, conds, &mut |out: &Array2<f64>| {
                let mut d = Array2::zeros(out.dim());
                for (i, row) in out.outer_iter().enumerate() {
                    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|l| (l - top).exp()).sum();
                    let log_z = top + z.ln();
                    let y = labels[i] as usize;
                    nll -= weights[i] * (row[y] - log_z) * scale;
                    for (j, l) in row.iter().enumerate() {
                        let p = (l - log_z).exp();
                        d[[i, j]] = weights[i] * scale * (p - f64::from(u8::from(j == y)));
                    }
                }
                d
            });
        if !nll.is_finite() {
            return Err(Error::non_finite("policy loss", format!("{nll}")));
        }
        self.optimizer
            .apply(self.net.params_mut(), &crate::approx::Gradient::Dense(grad))?;
        Ok(nll)
    }
}

/// Softmax probabilities of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Index of the largest logit (first one on ties).
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, l) in logits.iter().enumerate() {
        if *l > logits[best] {
            best = i;
        }
    }
    best
}
