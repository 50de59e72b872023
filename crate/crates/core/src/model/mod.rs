//! Stochastic-encoder classifier with an auxiliary privileged head.
//!
//! The encoder is a small CNN trunk (stride-2 conv blocks + global mean
//! pool) feeding two linear heads: `mu_head` and `sigma_head`, which
//! parametrize a Gaussian latent. Training samples the latent with the
//! reparametrization `z = μ + ε ⊙ σ` (σ = softplus of the raw head output,
//! so it is strictly positive), letting gradients flow through the sampling
//! step. Evaluation always uses `z = μ`, keeping accuracy deterministic.
//!
//! Two MLPs consume the latent: the task classifier (2 presence logits) and
//! the privileged head, which predicts the mask-derived privileged label —
//! either severity logits over `0..=N_sc` trained with cross-entropy, or a
//! single mass-regression scalar trained with MSE. The combined objective is
//!
//! ```text
//! total = CE(y, classifier(z)) + α · priv_loss(q, priv_head(z))
//! ```
//!
//! The auxiliary term is (up to the constant entropy of q) a variational
//! lower bound on the mutual information between the latent and the
//! privileged label, so minimizing it forces the latent to encode what the
//! mask knew. With `α = 0` and deterministic encoding the objective reduces
//! exactly to ERM.

mod config;
mod graph;
mod params;

pub use config::{ModelConfig, ModelError};
pub use graph::{BatchData, EpsDraws, LatentSample, LossBundle, PrivTargets};
pub use params::{Gradients, Linear, ModelParams};
