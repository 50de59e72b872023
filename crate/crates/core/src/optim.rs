//! SGD-with-momentum and Adam optimizers over named parameter tensors.

use crate::model::{Gradients, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in {name}")]
    NonFiniteGrad { name: String },
    #[error("gradient bundle does not match parameters: expected {expected}, found {found}")]
    Misaligned { expected: String, found: String },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    /// SGD momentum coefficient.
    pub momentum: f64,
    /// Adam first/second-moment decay.
    pub beta1: f64,
    pub beta2: f64,
    /// Adam denominator offset.
    pub eps: f64,
    /// L2 penalty, applied by adding `weight_decay · w` to the gradient.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let fail = |msg: String| Err(OptimError::InvalidConfig(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be finite and >= 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} must be in [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must be in [0, 1)".to_string());
        }
        if !(self.eps > 0.0) {
            return fail("adam eps must be positive".to_string());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be finite and >= 0".to_string());
        }
        Ok(())
    }
}

enum Slot {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
}

/// Optimizer state, aligned with a model's canonical parameter order.
pub struct Optimizer {
    config: OptimConfig,
    slots: Vec<(String, Slot)>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(config: OptimConfig, params: &ModelParams) -> Result<Self, OptimError> {
        config.validate()?;
        let slots = params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                let slot = match config.kind {
                    OptimKind::SgdMomentum => Slot::Sgd {
                        velocity: vec![0.0; t.numel()],
                    },
                    OptimKind::Adam => Slot::Adam {
                        m: vec![0.0; t.numel()],
                        v: vec![0.0; t.numel()],
                    },
                };
                (name, slot)
            })
            .collect();
        Ok(Self {
            config,
            slots,
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update. Rejects non-finite gradients before touching any
    /// parameter, so a failed step leaves the model unchanged.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<(), OptimError> {
        for (name, g) in &grads.tensors {
            if !g.all_finite() {
                return Err(OptimError::NonFiniteGrad { name: name.clone() });
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let c = &self.config;

        for (((pname, tensor), (sname, slot)), (gname, grad)) in params
            .named_tensors_mut()
            .into_iter()
            .zip(self.slots.iter_mut())
            .zip(&grads.tensors)
        {
            if pname != *sname || pname != *gname {
                let found = if pname != *sname { sname.clone() } else { gname.clone() };
                return Err(OptimError::Misaligned {
                    expected: pname,
                    found,
                });
            }
            let w = tensor.data_mut();
            let g = grad.data();
            match slot {
                Slot::Sgd { velocity } => {
                    for i in 0..w.len() {
                        let gi = g[i] + c.weight_decay * w[i];
                        velocity[i] = c.momentum * velocity[i] + gi;
                        w[i] -= c.lr * velocity[i];
                    }
                }
                Slot::Adam { m, v } => {
                    let bc1 = 1.0 - c.beta1.powi(t as i32);
                    let bc2 = 1.0 - c.beta2.powi(t as i32);
                    for i in 0..w.len() {
                        let gi = g[i] + c.weight_decay * w[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        w[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
