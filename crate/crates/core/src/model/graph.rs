//! Forward/backward graph construction and the public model operations.

use super::config::{ModelConfig, ModelError};
use super::params::{Gradients, ModelParams};
use crate::data::Sample;
use crate::labels::PrivKind;
use crate::tensor::{Tape, Tensor, Var};

/// Reparametrization noise for one batch.
#[derive(Debug, Clone)]
pub enum EpsDraws {
    /// ε ≡ 0: the latent is exactly μ and no noise nodes enter the graph.
    Deterministic,
    /// Explicit per-sample draws, shape `[B, d_z]`.
    Noise(Tensor),
}

/// Privileged targets for one batch, matching the model's head kind.
#[derive(Debug, Clone)]
pub enum PrivTargets {
    /// Severity classes in `0..=N_sc`.
    Severity(Vec<usize>),
    /// Mass regression targets (raw pixel counts, or counts/H·W when the
    /// model normalizes).
    Mass(Vec<f64>),
}

/// A collated minibatch: images, task labels, privileged targets.
#[derive(Debug, Clone)]
pub struct BatchData {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub q: PrivTargets,
}

impl BatchData {
    /// Assemble a batch from dataset samples, deriving all targets from the
    /// masks with the model's `n_sc` / normalization settings.
    pub fn collate(
        samples: &[&Sample],
        indices: &[usize],
        fluid_class: u8,
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        if indices.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let (h, w) = (config.height, config.width);
        let mut x = Vec::with_capacity(indices.len() * h * w);
        let mut y = Vec::with_capacity(indices.len());
        let mut severity = Vec::new();
        let mut mass = Vec::new();
        for &i in indices {
            let s = samples[i];
            if s.mask.height() != h || s.mask.width() != w {
                return Err(ModelError::InputShape {
                    expected: (h, w),
                    got: vec![indices.len(), 1, s.mask.height(), s.mask.width()],
                });
            }
            x.extend(s.image_f64());
            y.push(s.mask.presence_label(fluid_class)? as usize);
            match config.priv_kind {
                PrivKind::Severity => {
                    severity.push(s.mask.severity(fluid_class, config.n_sc)? as usize)
                }
                PrivKind::Mass => {
                    let m = s.mask.fluid_mass(fluid_class)? as f64;
                    mass.push(if config.normalize_mass {
                        m / (h * w) as f64
                    } else {
                        m
                    });
                }
            }
        }
        let x = Tensor::from_vec(vec![indices.len(), 1, h, w], x)?;
        let q = match config.priv_kind {
            PrivKind::Severity => PrivTargets::Severity(severity),
            PrivKind::Mass => PrivTargets::Mass(mass),
        };
        Ok(Self { x, y, q })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The encoder's output for one batch (values, not graph nodes).
#[derive(Debug, Clone)]
pub struct LatentSample {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub eps: Tensor,
    pub z: Tensor,
}

/// Loss values (and optionally gradients) for one batch.
#[derive(Debug)]
pub struct LossBundle {
    pub total: f64,
    pub task_ce: f64,
    /// CE (severity) or MSE (mass) of the privileged head; 0 for ERM graphs,
    /// which never build the privileged branch.
    pub priv_loss: f64,
    pub grads: Option<Gradients>,
}

/// Graph-side handles for every parameter, in canonical order.
struct GraphVars {
    named: Vec<(String, Var)>,
    trunk: Vec<(Var, Var)>,
    mu: (Var, Var),
    sigma: (Var, Var),
    cls: [(Var, Var); 2],
    priv_h: [(Var, Var); 2],
}

fn insert_leaves(tape: &mut Tape, params: &ModelParams) -> GraphVars {
    let mut named = Vec::new();
    let mut push = |tape: &mut Tape, name: String, t: &Tensor| -> Var {
        let v = tape.leaf(t.clone());
        named.push((name, v));
        v
    };
    let trunk: Vec<(Var, Var)> = params
        .trunk
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            (
                push(tape, format!("trunk.conv{i}.weight"), &layer.weight),
                push(tape, format!("trunk.conv{i}.bias"), &layer.bias),
            )
        })
        .collect();
    let mu = (
        push(tape, "mu_head.weight".into(), &params.mu_head.weight),
        push(tape, "mu_head.bias".into(), &params.mu_head.bias),
    );
    let sigma = (
        push(tape, "sigma_head.weight".into(), &params.sigma_head.weight),
        push(tape, "sigma_head.bias".into(), &params.sigma_head.bias),
    );
    let cls = [
        (
            push(tape, "classifier.fc1.weight".into(), &params.classifier[0].weight),
            push(tape, "classifier.fc1.bias".into(), &params.classifier[0].bias),
        ),
        (
            push(tape, "classifier.fc2.weight".into(), &params.classifier[1].weight),
            push(tape, "classifier.fc2.bias".into(), &params.classifier[1].bias),
        ),
    ];
    let priv_h = [
        (
            push(tape, "priv_head.fc1.weight".into(), &params.priv_head[0].weight),
            push(tape, "priv_head.fc1.bias".into(), &params.priv_head[0].bias),
        ),
        (
            push(tape, "priv_head.fc2.weight".into(), &params.priv_head[1].weight),
            push(tape, "priv_head.fc2.bias".into(), &params.priv_head[1].bias),
        ),
    ];
    GraphVars {
        named,
        trunk,
        mu,
        sigma,
        cls,
        priv_h,
    }
}

/// Conv blocks + global mean pool: `[B,1,H,W] -> [B, C_last]`.
fn trunk_forward(tape: &mut Tape, x: Var, gv: &GraphVars) -> Result<Var, ModelError> {
    let mut h = x;
    for &(w, b) in &gv.trunk {
        let c = tape.conv2d(h, w, b, 2, 1)?;
        h = tape.relu(c);
    }
    Ok(tape.global_avg_pool(h)?)
}

fn linear(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var, ModelError> {
    let m = tape.matmul(x, w)?;
    Ok(tape.bias_add(m, b)?)
}

fn mlp2(tape: &mut Tape, x: Var, layers: &[(Var, Var); 2]) -> Result<Var, ModelError> {
    let h = linear(tape, x, layers[0])?;
    let h = tape.relu(h);
    linear(tape, h, layers[1])
}

/// μ (always) and z; σ and the ε leaf only when noise is supplied.
fn latent_forward(
    tape: &mut Tape,
    feat: Var,
    gv: &GraphVars,
    eps: &EpsDraws,
    batch: usize,
    d_z: usize,
) -> Result<(Var, Option<Var>, Var), ModelError> {
    let mu = linear(tape, feat, gv.mu)?;
    match eps {
        EpsDraws::Deterministic => Ok((mu, None, mu)),
        EpsDraws::Noise(draws) => {
            if draws.shape() != [batch, d_z] {
                return Err(ModelError::EpsShape {
                    batch,
                    latent_dim: d_z,
                    got: draws.shape().to_vec(),
                });
            }
            let raw = linear(tape, feat, gv.sigma)?;
            let sigma = tape.softplus(raw);
            let eps_leaf = tape.leaf(draws.clone());
            let noise = tape.mul(eps_leaf, sigma)?;
            let z = tape.add(mu, noise)?;
            Ok((mu, Some(sigma), z))
        }
    }
}

fn check_input(config: &ModelConfig, x: &Tensor) -> Result<usize, ModelError> {
    let shape = x.shape();
    if shape.len() == 4 && shape[1] == 1 && shape[2] == config.height && shape[3] == config.width {
        Ok(shape[0])
    } else {
        Err(ModelError::InputShape {
            expected: (config.height, config.width),
            got: shape.to_vec(),
        })
    }
}

fn check_latent(config: &ModelConfig, z: &Tensor) -> Result<(), ModelError> {
    if z.shape().len() == 2 && z.shape()[1] == config.latent_dim {
        Ok(())
    } else {
        Err(ModelError::LatentShape {
            latent_dim: config.latent_dim,
            got: z.shape().to_vec(),
        })
    }
}

/// Privileged-branch loss node for the configured head kind.
fn priv_loss_node(
    tape: &mut Tape,
    z: Var,
    gv: &GraphVars,
    config: &ModelConfig,
    q: &PrivTargets,
) -> Result<Var, ModelError> {
    let logits = mlp2(tape, z, &gv.priv_h)?;
    match (config.priv_kind, q) {
        (PrivKind::Severity, PrivTargets::Severity(targets)) => {
            Ok(tape.softmax_cross_entropy(logits, targets)?)
        }
        (PrivKind::Mass, PrivTargets::Mass(values)) => {
            let t = Tensor::from_vec(vec![values.len(), 1], values.clone())?;
            let target = tape.leaf(t);
            Ok(tape.mse(logits, target)?)
        }
        (built, PrivTargets::Severity(_)) => Err(ModelError::TargetMismatch {
            built,
            targets: "severity",
        }),
        (built, PrivTargets::Mass(_)) => Err(ModelError::TargetMismatch {
            built,
            targets: "mass",
        }),
    }
}

fn extract_grads(tape: &Tape, gv: &GraphVars) -> Gradients {
    Gradients {
        tensors: gv
            .named
            .iter()
            .map(|(name, var)| (name.clone(), tape.grad(*var)))
            .collect(),
    }
}

impl ModelParams {
    /// Run the stochastic encoder, returning values for (μ, σ, ε, z).
    /// σ is reported even in deterministic mode (where ε = 0 and z = μ).
    pub fn encode(&self, x: &Tensor, eps: &EpsDraws) -> Result<LatentSample, ModelError> {
        let batch = check_input(self.config(), x)?;
        let d_z = self.config().latent_dim;
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let xv = tape.leaf(x.clone());
        let feat = trunk_forward(&mut tape, xv, &gv)?;
        let mu_v = linear(&mut tape, feat, gv.mu)?;
        let raw = linear(&mut tape, feat, gv.sigma)?;
        let sigma_v = tape.softplus(raw);
        let mu = tape.value(mu_v).clone();
        let sigma = tape.value(sigma_v).clone();
        let (eps_t, z) = match eps {
            EpsDraws::Deterministic => (Tensor::zeros(vec![batch, d_z]), mu.clone()),
            EpsDraws::Noise(draws) => {
                if draws.shape() != [batch, d_z] {
                    return Err(ModelError::EpsShape {
                        batch,
                        latent_dim: d_z,
                        got: draws.shape().to_vec(),
                    });
                }
                let z_data: Vec<f64> = mu
                    .data()
                    .iter()
                    .zip(sigma.data())
                    .zip(draws.data())
                    .map(|((&m, &s), &e)| m + e * s)
                    .collect();
                (
                    draws.clone(),
                    Tensor::from_vec(vec![batch, d_z], z_data)?,
                )
            }
        };
        Ok(LatentSample {
            mu,
            sigma,
            eps: eps_t,
            z,
        })
    }

    /// Task logits for a latent batch `[B, d_z] -> [B, 2]`.
    pub fn classify(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        check_latent(self.config(), z)?;
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let zv = tape.leaf(z.clone());
        let logits = mlp2(&mut tape, zv, &gv.cls)?;
        Ok(tape.value(logits).clone())
    }

    /// Privileged-head output for a latent batch: severity logits
    /// `[B, N_sc+1]` or a mass scalar `[B, 1]`. `kind` must match the head
    /// the model was built with.
    pub fn predict_privileged(&self, z: &Tensor, kind: PrivKind) -> Result<Tensor, ModelError> {
        if kind != self.config().priv_kind {
            return Err(ModelError::KindMismatch {
                built: self.config().priv_kind,
                requested: kind,
            });
        }
        check_latent(self.config(), z)?;
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let zv = tape.leaf(z.clone());
        let logits = mlp2(&mut tape, zv, &gv.priv_h)?;
        Ok(tape.value(logits).clone())
    }

    /// Deterministic evaluation: class predictions from the μ latent.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>, ModelError> {
        check_input(self.config(), x)?;
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let xv = tape.leaf(x.clone());
        let feat = trunk_forward(&mut tape, xv, &gv)?;
        let mu = linear(&mut tape, feat, gv.mu)?;
        let logits = mlp2(&mut tape, mu, &gv.cls)?;
        Ok(tape.value(logits).argmax_rows()?)
    }

    /// The combined objective `task_CE + α · priv_loss` on `z = μ + ε⊙σ`.
    pub fn lpmii_loss(
        &self,
        batch: &BatchData,
        alpha: f64,
        eps: &EpsDraws,
        want_grads: bool,
    ) -> Result<LossBundle, ModelError> {
        let b = check_input(self.config(), &batch.x)?;
        if batch.y.len() != b {
            return Err(ModelError::InputShape {
                expected: (self.config().height, self.config().width),
                got: vec![batch.y.len()],
            });
        }
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let xv = tape.leaf(batch.x.clone());
        let feat = trunk_forward(&mut tape, xv, &gv)?;
        let (_, _, z) = latent_forward(&mut tape, feat, &gv, eps, b, self.config().latent_dim)?;
        let task_logits = mlp2(&mut tape, z, &gv.cls)?;
        let task_ce = tape.softmax_cross_entropy(task_logits, &batch.y)?;
        let priv_node = priv_loss_node(&mut tape, z, &gv, self.config(), &batch.q)?;
        let scaled = tape.scale(priv_node, alpha);
        let total = tape.add(task_ce, scaled)?;

        let grads = if want_grads {
            tape.backward(total)?;
            Some(extract_grads(&tape, &gv))
        } else {
            None
        };
        Ok(LossBundle {
            total: tape.value(total).item()?,
            task_ce: tape.value(task_ce).item()?,
            priv_loss: tape.value(priv_node).item()?,
            grads,
        })
    }

    /// Plain ERM: deterministic encoding, task branch only. The σ and
    /// privileged parameters never enter the graph, so their gradients are
    /// exactly zero.
    pub fn erm_loss(&self, batch: &BatchData, want_grads: bool) -> Result<LossBundle, ModelError> {
        let b = check_input(self.config(), &batch.x)?;
        if batch.y.len() != b {
            return Err(ModelError::InputShape {
                expected: (self.config().height, self.config().width),
                got: vec![batch.y.len()],
            });
        }
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let xv = tape.leaf(batch.x.clone());
        let feat = trunk_forward(&mut tape, xv, &gv)?;
        let mu = linear(&mut tape, feat, gv.mu)?;
        let task_logits = mlp2(&mut tape, mu, &gv.cls)?;
        let task_ce = tape.softmax_cross_entropy(task_logits, &batch.y)?;
        let grads = if want_grads {
            tape.backward(task_ce)?;
            Some(extract_grads(&tape, &gv))
        } else {
            None
        };
        Ok(LossBundle {
            total: tape.value(task_ce).item()?,
            task_ce: tape.value(task_ce).item()?,
            priv_loss: 0.0,
            grads,
        })
    }

    /// Variational MI lower bound (up to the constant H(Q)):
    /// `−mean CE(q, r_γ(z))`. Diagnostic; larger is better, always ≤ 0.
    pub fn mi_lower_bound_estimate(
        &self,
        batch: &BatchData,
        eps: &EpsDraws,
    ) -> Result<f64, ModelError> {
        if self.config().priv_kind != PrivKind::Severity {
            return Err(ModelError::MiNeedsSeverity(self.config().priv_kind));
        }
        let b = check_input(self.config(), &batch.x)?;
        let mut tape = Tape::new();
        let gv = insert_leaves(&mut tape, self);
        let xv = tape.leaf(batch.x.clone());
        let feat = trunk_forward(&mut tape, xv, &gv)?;
        let (_, _, z) = latent_forward(&mut tape, feat, &gv, eps, b, self.config().latent_dim)?;
        let ce = priv_loss_node(&mut tape, z, &gv, self.config(), &batch.q)?;
        Ok(-tape.value(ce).item()?)
    }
}
