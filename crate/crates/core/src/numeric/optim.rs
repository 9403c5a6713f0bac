//! Parameters and first-order optimizers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Named trainable tensor with an accumulated gradient of the same shape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Update rule selection with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state. Adam moments are keyed by parameter name so the set of
/// parameters may be assembled in any order and round-trips through
/// checkpoints.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Number of completed steps; Adam bias correction uses step + 1.
    pub step_count: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    /// Apply one update to every parameter and zero the gradients.
    /// Aborts with [`Error::GradientOverflow`] before touching any value if
    /// some gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        for p in params.iter() {
            if !p.grad.all_finite() {
                return Err(Error::GradientOverflow {
                    param: p.name.clone(),
                });
            }
        }
        let t = self.step_count + 1;
        for p in params.iter_mut() {
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = self.learning_rate;
                    for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *v -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(p.name.clone())
                        .or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
                    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
                    let lr = self.learning_rate;
                    for ((val, g), (mi, vi)) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(p.grad.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *val -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
            p.zero_grad();
        }
        self.step_count = t;
        Ok(())
    }

    /// Moment tensors in name order, for checkpointing.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.moments.iter().map(|(k, (m, v))| (k.as_str(), m, v))
    }

    /// Install a moment pair read back from a checkpoint.
    pub fn set_moment(&mut self, name: impl Into<String>, m: Tensor, v: Tensor) {
        self.moments.insert(name.into(), (m, v));
    }

    /// Snap every moment through f32, mirroring what a checkpoint write and
    /// reload would do to them.
    pub fn round_moments_to_f32(&mut self) {
        for (m, v) in self.moments.values_mut() {
            m.round_to_f32();
            v.round_to_f32();
        }
    }
}
