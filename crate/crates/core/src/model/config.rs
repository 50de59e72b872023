//! Model architecture configuration and model-level errors.

use crate::labels::PrivKind;
use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input batch has shape {got:?}, model expects [B, 1, {h}, {w}]", h = .expected.0, w = .expected.1)]
    InputShape {
        expected: (usize, usize),
        got: Vec<usize>,
    },
    #[error("latent has shape {got:?}, expected [B, {latent_dim}]")]
    LatentShape { latent_dim: usize, got: Vec<usize> },
    #[error("model was built with a {built:?} privileged head but {requested:?} was requested")]
    KindMismatch {
        built: PrivKind,
        requested: PrivKind,
    },
    #[error("mi_lower_bound_estimate requires a severity head, model has {0:?}")]
    MiNeedsSeverity(PrivKind),
    #[error("eps draws have shape {got:?}, expected [{batch}, {latent_dim}]")]
    EpsShape {
        batch: usize,
        latent_dim: usize,
        got: Vec<usize>,
    },
    #[error("batch carries {targets} privileged targets, model head is {built:?}")]
    TargetMismatch { built: PrivKind, targets: &'static str },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
}

/// Architecture hyperparameters; every field participates in the checkpoint
/// config digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input image height/width (grayscale, one channel).
    pub height: usize,
    pub width: usize,
    /// Output channels of each stride-2 conv block (3×3 kernels, relu).
    pub conv_channels: Vec<usize>,
    /// Latent dimensionality d_z shared by μ, σ, and both heads.
    pub latent_dim: usize,
    /// Severity scale: the severity head emits n_sc + 1 logits.
    pub n_sc: u8,
    /// Which privileged head the model carries.
    pub priv_kind: PrivKind,
    /// Divide mass-regression targets by H·W (off reproduces raw-count
    /// regression, whose scale mismatch is part of the method comparison).
    pub normalize_mass: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            conv_channels: vec![8, 16, 32],
            latent_dim: 32,
            n_sc: 5,
            priv_kind: PrivKind::Severity,
            normalize_mass: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.height < 4 || self.width < 4 {
            return fail(format!("input {}x{} is below the 4x4 minimum", self.height, self.width));
        }
        if self.conv_channels.is_empty() {
            return fail("need at least one conv block".to_string());
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return fail("conv channel counts must be positive".to_string());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".to_string());
        }
        if self.n_sc == 0 {
            return fail("n_sc must be >= 1".to_string());
        }
        // Each stride-2 block maps side s to ceil(s/2); the final feature map
        // must keep at least one pixel.
        let (mut h, mut w) = (self.height, self.width);
        for _ in &self.conv_channels {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        if h == 0 || w == 0 {
            return fail("too many conv blocks for the input size".to_string());
        }
        Ok(())
    }

    /// Number of task classes (binary presence).
    pub const N_TASK_CLASSES: usize = 2;

    /// Output width of the privileged head.
    pub fn priv_out(&self) -> usize {
        match self.priv_kind {
            PrivKind::Severity => self.n_sc as usize + 1,
            PrivKind::Mass => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cfg = ModelConfig {
            conv_channels: vec![],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = ModelConfig {
            latent_dim: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = ModelConfig {
            height: 2,
            width: 64,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn priv_out_depends_on_kind() {
        let sev = ModelConfig::default();
        assert_eq!(sev.priv_out(), 6);
        let mass = ModelConfig {
            priv_kind: PrivKind::Mass,
            ..ModelConfig::default()
        };
        assert_eq!(mass.priv_out(), 1);
    }
}
