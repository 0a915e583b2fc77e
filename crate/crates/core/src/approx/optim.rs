use super::Gradient;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::Sgd { lr } => lr > 0.0 && lr.is_finite(),
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                lr > 0.0
                    && lr.is_finite()
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Gradient-descent state. Sparse gradients update only the touched
/// coordinates (Adam moments of untouched coordinates are left as is).
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; num_params], vec![0.0; num_params]),
        };
        Self {
            kind,
            m,
            v,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along `grad`. Non-finite gradients leave `params` untouched.
    pub fn apply(&mut self, params: &mut [f64], grad: &Gradient) -> Result<()> {
        grad.check_finite()?;
        if let Gradient::Dense(g) = grad {
            if g.len() != params.len() {
                return Err(Error::Shape(format!(
                    "gradient has {} entries for {} parameters",
                    g.len(),
                    params.len()
                )));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => match grad {
                Gradient::Dense(g) => {
                    for (p, d) in params.iter_mut().zip(g) {
                        *p -= lr * d;
                    }
                }
                Gradient::Sparse { indices, values } => {
                    for (i, d) in indices.iter().zip(values) {
                        params[*i] -= lr * d;
                    }
                }
            },
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let mut update = |i: usize, d: f64, p: &mut f64| {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                match grad {
                    Gradient::Dense(g) => {
                        for (i, (p, d)) in params.iter_mut().zip(g).enumerate() {
                            update(i, *d, p);
                        }
                    }
                    Gradient::Sparse { indices, values } => {
                        let mut pairs: Vec<(usize, f64)> = indices
                            .iter()
                            .copied()
                            .zip(values.iter().copied())
                            .collect();
                        pairs.sort_by_key(|p| p.0);
                        let mut j = 0;
                        while j < pairs.len() {
                            let i = pairs[j].0;
                            let mut d = 0.0;
                            while j < pairs.len() && pairs[j].0 == i {
                                d += pairs[j].1;
                                j += 1;
                            }
                            update(i, d, &mut params[i]);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Frozen parameter snapshot used for bootstrap targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetCopy {
    params: Vec<f64>,
    polyak_rate: f64,
}

impl TargetCopy {
    pub fn new(live: &[f64], polyak_rate: f64) -> Result<Self> {
        if !(polyak_rate > 0.0 && polyak_rate <= 1.0) {
            return Err(Error::Config(format!(
                "polyak rate {polyak_rate} not in (0,1]"
            )));
        }
        Ok(Self {
            params: live.to_vec(),
            polyak_rate,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn polyak_rate(&self) -> f64 {
        self.polyak_rate
    }

    /// `target <- (1 - rho) target + rho live`; a hard copy when `rho = 1`.
    pub fn sync(&mut self, live: &[f64]) -> Result<()> {
        if live.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "target has {} parameters, live has {}",
                self.params.len(),
                live.len()
            )));
        }
        self.blend(live, self.polyak_rate);
        Ok(())
    }

    /// Hard copy regardless of the configured rate.
    pub fn copy_from(&mut self, live: &[f64]) -> Result<()> {
        if live.len() != self.params.len() {
            return Err(Error::Shape("target and live shapes differ".into()));
        }
        self.params.copy_from_slice(live);
        Ok(())
    }

    fn blend(&mut self, live: &[f64], rho: f64) {
        if rho == 1.0 {
            self.params.copy_from_slice(live);
        } else {
            for (t, l) in self.params.iter_mut().zip(live) {
                *t = (1.0 - rho) * *t + rho * l;
            }
        }
    }
}
