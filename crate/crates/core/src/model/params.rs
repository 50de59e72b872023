//! Parameter container, initialization, and gradient bundles.

use super::config::{ModelConfig, ModelError};
use crate::seed::{stream, STREAM_INIT};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A (weight, bias) parameter pair; linear heads hold 2-d weights, trunk
/// blocks hold 4-d conv weights.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Raw σ-head bias at init: softplus(-2) ≈ 0.127, so training starts close
/// to deterministic encoding and learns how much noise to admit.
pub const SIGMA_BIAS_INIT: f64 = -2.0;

/// All learnable parameters plus the architecture they instantiate.
///
/// Initialization draws weights in a fixed canonical order — trunk blocks,
/// then μ-head, σ-head, classifier, and the privileged head last — so two
/// models that differ only in the privileged head's output width (severity
/// vs mass vs unused) share bit-identical draws for everything else under
/// the same seed.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    pub trunk: Vec<Linear>,
    pub mu_head: Linear,
    pub sigma_head: Linear,
    pub classifier: [Linear; 2],
    pub priv_head: [Linear; 2],
}

impl ModelParams {
    /// Kaiming-normal init (std = √(2/fan_in)) for weights, zero biases
    /// except the σ-head bias. Fully determined by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream(seed, &[STREAM_INIT]);
        let mut draw = |shape: Vec<usize>, fan_in: usize| -> Tensor {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Tensor::from_vec(shape, data).expect("shape/data agree")
        };

        let mut trunk = Vec::new();
        let mut c_in = 1;
        for &c_out in &config.conv_channels {
            trunk.push(Linear {
                weight: draw(vec![c_out, c_in, 3, 3], c_in * 9),
                bias: Tensor::zeros(vec![c_out]),
            });
            c_in = c_out;
        }
        let feat = *config.conv_channels.last().expect("validated nonempty");
        let d_z = config.latent_dim;

        let mu_head = Linear {
            weight: draw(vec![feat, d_z], feat),
            bias: Tensor::zeros(vec![d_z]),
        };
        let sigma_head = Linear {
            weight: draw(vec![feat, d_z], feat),
            bias: Tensor::full(vec![d_z], SIGMA_BIAS_INIT),
        };
        let classifier = [
            Linear {
                weight: draw(vec![d_z, d_z], d_z),
                bias: Tensor::zeros(vec![d_z]),
            },
            Linear {
                weight: draw(vec![d_z, ModelConfig::N_TASK_CLASSES], d_z),
                bias: Tensor::zeros(vec![ModelConfig::N_TASK_CLASSES]),
            },
        ];
        let priv_head = [
            Linear {
                weight: draw(vec![d_z, d_z], d_z),
                bias: Tensor::zeros(vec![d_z]),
            },
            Linear {
                weight: draw(vec![d_z, config.priv_out()], d_z),
                bias: Tensor::zeros(vec![config.priv_out()]),
            },
        ];

        Ok(Self {
            config,
            trunk,
            mu_head,
            sigma_head,
            classifier,
            priv_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameters in canonical order with their stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter().enumerate() {
            out.push((format!("trunk.conv{i}.weight"), &layer.weight));
            out.push((format!("trunk.conv{i}.bias"), &layer.bias));
        }
        out.push(("mu_head.weight".to_string(), &self.mu_head.weight));
        out.push(("mu_head.bias".to_string(), &self.mu_head.bias));
        out.push(("sigma_head.weight".to_string(), &self.sigma_head.weight));
        out.push(("sigma_head.bias".to_string(), &self.sigma_head.bias));
        for (name, layer) in [("fc1", &self.classifier[0]), ("fc2", &self.classifier[1])] {
            out.push((format!("classifier.{name}.weight"), &layer.weight));
            out.push((format!("classifier.{name}.bias"), &layer.bias));
        }
        for (name, layer) in [("fc1", &self.priv_head[0]), ("fc2", &self.priv_head[1])] {
            out.push((format!("priv_head.{name}.weight"), &layer.weight));
            out.push((format!("priv_head.{name}.bias"), &layer.bias));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter_mut().enumerate() {
            out.push((format!("trunk.conv{i}.weight"), &mut layer.weight));
            out.push((format!("trunk.conv{i}.bias"), &mut layer.bias));
        }
        out.push(("mu_head.weight".to_string(), &mut self.mu_head.weight));
        out.push(("mu_head.bias".to_string(), &mut self.mu_head.bias));
        out.push(("sigma_head.weight".to_string(), &mut self.sigma_head.weight));
        out.push(("sigma_head.bias".to_string(), &mut self.sigma_head.bias));
        let [cls1, cls2] = &mut self.classifier;
        for (name, layer) in [("classifier.fc1", cls1), ("classifier.fc2", cls2)] {
            out.push((format!("{name}.weight"), &mut layer.weight));
            out.push((format!("{name}.bias"), &mut layer.bias));
        }
        let [priv1, priv2] = &mut self.priv_head;
        for (name, layer) in [("priv_head.fc1", priv1), ("priv_head.fc2", priv2)] {
            out.push((format!("{name}.weight"), &mut layer.weight));
            out.push((format!("{name}.bias"), &mut layer.bias));
        }
        out
    }

    /// Mutable access to one tensor by its canonical name (tests, surgery).
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.named_tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Fill every parameter (including biases) with draws from `rng`;
    /// test helper for randomized gradient checks.
    pub fn randomize(&mut self, rng: &mut impl Rng, std: f64) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for (_, t) in self.named_tensors_mut() {
            for v in t.data_mut() {
                *v = normal.sample(rng);
            }
        }
    }
}

/// Per-parameter gradients, aligned with `ModelParams::named_tensors`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::PrivKind;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(cfg.clone(), 1).unwrap();
        let b = ModelParams::init(cfg.clone(), 1).unwrap();
        let c = ModelParams::init(cfg, 2).unwrap();
        for ((na, ta), (nb, tb)) in a.named_tensors().iter().zip(b.named_tensors()) {
            assert_eq!(na, &nb);
            assert_eq!(ta.data(), tb.data());
        }
        assert_ne!(
            a.named_tensors()[0].1.data(),
            c.named_tensors()[0].1.data()
        );
    }

    #[test]
    fn shared_params_identical_across_priv_kinds() {
        let sev = ModelParams::init(ModelConfig::default(), 7).unwrap();
        let mass = ModelParams::init(
            ModelConfig {
                priv_kind: PrivKind::Mass,
                ..ModelConfig::default()
            },
            7,
        )
        .unwrap();
        for ((name, a), (_, b)) in sev.named_tensors().iter().zip(mass.named_tensors()) {
            if name.starts_with("priv_head.fc2") {
                continue;
            }
            assert_eq!(a.data(), b.data(), "{name} diverged across head kinds");
        }
    }

    #[test]
    fn named_tensor_order_is_canonical() {
        let p = ModelParams::init(ModelConfig::default(), 0).unwrap();
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "trunk.conv0.weight");
        assert_eq!(names[names.len() - 1], "priv_head.fc2.bias");
        let mu_pos = names.iter().position(|n| n == "mu_head.weight").unwrap();
        let sigma_pos = names.iter().position(|n| n == "sigma_head.weight").unwrap();
        let cls_pos = names.iter().position(|n| n == "classifier.fc1.weight").unwrap();
        let priv_pos = names.iter().position(|n| n == "priv_head.fc1.weight").unwrap();
        assert!(mu_pos < sigma_pos && sigma_pos < cls_pos && cls_pos < priv_pos);
    }

    #[test]
    fn sigma_bias_starts_near_deterministic() {
        let p = ModelParams::init(ModelConfig::default(), 0).unwrap();
        assert!(p.sigma_head.bias.data().iter().all(|&b| b == SIGMA_BIAS_INIT));
        assert!(crate::tensor::softplus(SIGMA_BIAS_INIT) < 0.2);
    }

    #[test]
    fn param_count_matches_architecture() {
        // conv: 8·1·9+8 + 16·8·9+16 + 32·16·9+32; heads on feat=32, d_z=32.
        let p = ModelParams::init(ModelConfig::default(), 0).unwrap();
        let conv = 8 * 9 + 8 + 16 * 8 * 9 + 16 + 32 * 16 * 9 + 32;
        let heads = 2 * (32 * 32 + 32); // mu + sigma
        let cls = (32 * 32 + 32) + (32 * 2 + 2);
        let privh = (32 * 32 + 32) + (32 * 6 + 6);
        assert_eq!(p.param_count(), conv + heads + cls + privh);
    }
}
