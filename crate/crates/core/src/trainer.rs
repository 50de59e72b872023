//! Deterministic minibatch training loop for the ERM and LPMII objectives.
//!
//! A run is fully determined by its [`TrainConfig`]: the master seed fixes the
//! parameter initialization, the per-domain stratified validation split, every
//! epoch's batch order, and the reparametrization noise ε. Within one seed the
//! split and batch orders are identical across objectives, so metric
//! differences between methods are attributable to the objective alone.
//!
//! Model selection follows the training-domain-validation protocol: after
//! every epoch the classifier is scored by top-1 accuracy on the pooled
//! validation split (deterministic μ encoding), and the epoch with the
//! highest accuracy wins, earliest epoch on ties.

use crate::data::{make_batches, DomainDataset, Sample, N_FLUID_CLASSES};
use crate::labels::PrivKind;
use crate::model::{BatchData, EpsDraws, ModelConfig, ModelError, ModelParams};
use crate::optim::{OptimConfig, OptimError, Optimizer};
use crate::seed::{derive_seed, stream, STREAM_EPS, STREAM_SPLIT};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training domains supplied")]
    NoDomains,
    #[error("domain {domain} is {got_h}x{got_w}, model expects {want_h}x{want_w}")]
    ShapeMismatch {
        domain: String,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("training split is empty; supply more data or lower val_fraction")]
    EmptyTrainSplit,
    #[error("validation split is empty; supply more data or raise val_fraction")]
    EmptyValSplit,
    #[error("non-finite loss at epoch {epoch}, step {step}: training diverged")]
    Diverged { epoch: usize, step: usize },
    #[error("training history is empty")]
    EmptyHistory,
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
}

/// Training objective. `erm` is the plain cross-entropy baseline; the two
/// `lpmii-*` variants add the α-weighted auxiliary loss on the privileged
/// target predicted from the sampled latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Erm,
    LpmiiSeverity,
    LpmiiMass,
}

impl Objective {
    pub const ALL: [Objective; 3] = [
        Objective::Erm,
        Objective::LpmiiSeverity,
        Objective::LpmiiMass,
    ];

    /// The privileged-head kind this objective requires. ERM keeps the
    /// severity-shaped head (untrained) so its shared parameters initialize
    /// identically to `lpmii-severity`.
    pub fn priv_kind(self) -> PrivKind {
        match self {
            Objective::Erm | Objective::LpmiiSeverity => PrivKind::Severity,
            Objective::LpmiiMass => PrivKind::Mass,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Erm => "erm",
            Objective::LpmiiSeverity => "lpmii-severity",
            Objective::LpmiiMass => "lpmii-mass",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Objective::ALL.into_iter().find(|o| o.name() == s)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Weight of the auxiliary privileged loss.
    pub alpha: f64,
    /// Fluid class whose presence defines the task label (1-based).
    pub fluid_class: u8,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-domain, per-class fraction of training data held out for model
    /// selection. Open interval (0, 1).
    pub val_fraction: f64,
    pub seed: u64,
    /// Replace ε by zeros (deterministic latent). Diagnostic switch used to
    /// demonstrate the exact reduction of `lpmii-*` at α=0 to ERM.
    pub zero_eps: bool,
    pub model: ModelConfig,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::LpmiiSeverity,
            alpha: 1.0,
            fluid_class: 1,
            epochs: 30,
            batch_size: 64,
            val_fraction: 0.2,
            seed: 0,
            zero_eps: false,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Set the objective and align the model's privileged head with it.
    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self.model.priv_kind = objective.priv_kind();
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.fluid_class == 0 || self.fluid_class > N_FLUID_CLASSES {
            return bad(format!(
                "fluid_class must be in 1..={N_FLUID_CLASSES}, got {}",
                self.fluid_class
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".to_string());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.model.priv_kind != self.objective.priv_kind() {
            return bad(format!(
                "objective {} requires a {:?} privileged head, model has {:?}",
                self.objective,
                self.objective.priv_kind(),
                self.model.priv_kind
            ));
        }
        self.model
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.optim
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// Indices into the pooled sample list (domains concatenated in input order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per-domain, per-class (stratified) validation split. For every domain and
/// every task label the sample indices are shuffled by a seed derived from
/// `(seed, domain index, class)` and `round(n · val_fraction)` of them go to
/// validation. Both index lists come back sorted; batch order is randomized
/// separately per epoch.
pub fn stratified_split(
    domains: &[DomainDataset],
    fluid_class: u8,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitIndices, TrainError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut offset = 0usize;
    for (d, ds) in domains.iter().enumerate() {
        let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, s) in ds.samples().iter().enumerate() {
            let y = s.mask.presence_label(fluid_class)? as usize;
            by_class[y].push(offset + i);
        }
        for (y, mut idxs) in by_class.into_iter().enumerate() {
            let mut rng = stream(seed, &[STREAM_SPLIT, d as u64, y as u64]);
            idxs.shuffle(&mut rng);
            let n_val = ((idxs.len() as f64) * val_fraction).round() as usize;
            let n_val = n_val.min(idxs.len());
            val.extend_from_slice(&idxs[..n_val]);
            train.extend_from_slice(&idxs[n_val..]);
        }
        offset += ds.len();
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}

/// One epoch of training diagnostics. All fields except `wall_secs` are
/// deterministic functions of the config and data; `wall_secs` is excluded
/// from determinism comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Sample-weighted mean of the full objective over the epoch's batches.
    pub train_total: f64,
    pub task_ce: f64,
    /// Auxiliary loss (severity CE or mass MSE); 0 for ERM.
    pub priv_loss: f64,
    /// Variational MI lower bound `−mean CE(q, r_γ(z))`, defined for the
    /// severity objective only.
    pub mi_estimate: Option<f64>,
    /// Top-1 accuracy on the pooled validation split, μ encoding.
    pub val_accuracy: f64,
    pub wall_secs: f64,
}

/// Result of a completed run: full history plus the selected and final
/// parameters and the split (for leakage audits).
#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were selected.
    pub best_epoch: usize,
    /// Parameters at `best_epoch` (training-domain validation selection).
    pub params: ModelParams,
    /// Parameters after the last epoch, regardless of selection.
    pub final_params: ModelParams,
    pub split: SplitIndices,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

fn draw_eps(
    rng: &mut ChaCha8Rng,
    config: &TrainConfig,
    batch: usize,
) -> Result<EpsDraws, TrainError> {
    if config.zero_eps {
        return Ok(EpsDraws::Deterministic);
    }
    let d = config.model.latent_dim;
    let data: Vec<f64> = (0..batch * d).map(|_| rng.sample(StandardNormal)).collect();
    let t = Tensor::from_vec(vec![batch, d], data).map_err(ModelError::from)?;
    Ok(EpsDraws::Noise(t))
}

fn accuracy_on(
    params: &ModelParams,
    pool: &[&Sample],
    indices: &[usize],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    for chunk in indices.chunks(config.batch_size) {
        let data = BatchData::collate(pool, chunk, config.fluid_class, &config.model)?;
        let preds = params.predict_batch(&data.x)?;
        correct += preds.iter().zip(&data.y).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Train on the pooled samples of `domains` and return the selected model.
pub fn train(config: &TrainConfig, domains: &[DomainDataset]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if domains.is_empty() {
        return Err(TrainError::NoDomains);
    }
    for ds in domains {
        if ds.height() != config.model.height || ds.width() != config.model.width {
            return Err(TrainError::ShapeMismatch {
                domain: ds.domain_id().to_string(),
                got_h: ds.height(),
                got_w: ds.width(),
                want_h: config.model.height,
                want_w: config.model.width,
            });
        }
    }
    let pool: Vec<&Sample> = domains.iter().flat_map(|d| d.samples()).collect();
    let split = stratified_split(domains, config.fluid_class, config.val_fraction, config.seed)?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptyValSplit);
    }

    let mut params = ModelParams::init(config.model.clone(), config.seed)?;
    let mut opt = Optimizer::new(config.optim.clone(), &params)?;
    let mut eps_rng = stream(config.seed, &[STREAM_EPS]);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let batches = make_batches(
            split.train.len(),
            config.batch_size,
            derive_seed(config.seed, &[epoch as u64]),
            true,
        );
        let (mut sum_total, mut sum_task, mut sum_priv, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (step0, batch) in batches.iter().enumerate() {
            let idxs: Vec<usize> = batch.iter().map(|&i| split.train[i]).collect();
            let data = BatchData::collate(&pool, &idxs, config.fluid_class, &config.model)?;
            let bundle = match config.objective {
                Objective::Erm => params.erm_loss(&data, true)?,
                Objective::LpmiiSeverity | Objective::LpmiiMass => {
                    let eps = draw_eps(&mut eps_rng, config, idxs.len())?;
                    params.lpmii_loss(&data, config.alpha, &eps, true)?
                }
            };
            let step = step0 + 1;
            if !bundle.total.is_finite() {
                return Err(TrainError::Diverged { epoch, step });
            }
            let grads = bundle.grads.expect("gradients were requested");
            match opt.step(&mut params, &grads) {
                Err(OptimError::NonFiniteGrad { .. }) => {
                    return Err(TrainError::Diverged { epoch, step })
                }
                other => other?,
            }
            let b = idxs.len() as f64;
            sum_total += bundle.total * b;
            sum_task += bundle.task_ce * b;
            sum_priv += bundle.priv_loss * b;
            n += idxs.len();
        }
        let nf = n as f64;
        let priv_loss = sum_priv / nf;
        let val_accuracy = accuracy_on(&params, &pool, &split.val, config)?;
        history.push(EpochRecord {
            epoch,
            train_total: sum_total / nf,
            task_ce: sum_task / nf,
            priv_loss,
            mi_estimate: match config.objective {
                Objective::LpmiiSeverity => Some(-priv_loss),
                _ => None,
            },
            val_accuracy,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        // Strict improvement keeps the earliest epoch on ties.
        if best
            .as_ref()
            .is_none_or(|(acc, _, _)| val_accuracy > *acc)
        {
            best = Some((val_accuracy, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("epochs >= 1");
    debug_assert_eq!(select_model(&history)?, best_epoch - 1);

    let ids = |idxs: &[usize]| idxs.iter().map(|&i| pool[i].id.clone()).collect();
    Ok(TrainOutcome {
        train_ids: ids(&split.train),
        val_ids: ids(&split.val),
        history,
        best_epoch,
        params: best_params,
        final_params: params,
        split,
    })
}

/// Index (0-based) into `history` of the epoch with the highest validation
/// accuracy; ties resolve to the earliest epoch.
pub fn select_model(history: &[EpochRecord]) -> Result<usize, TrainError> {
    if history.is_empty() {
        return Err(TrainError::EmptyHistory);
    }
    let mut best = 0;
    for (i, r) in history.iter().enumerate() {
        if r.val_accuracy > history[best].val_accuracy {
            best = i;
        }
    }
    Ok(best)
}

/// Write the per-epoch history as CSV. `mi_estimate` renders empty when
/// undefined for the objective.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    let mut out =
        String::from("epoch,train_total,task_ce,priv_loss,mi_estimate,val_accuracy,wall_secs\n");
    for r in history {
        let mi = r.mi_estimate.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            r.epoch, r.train_total, r.task_ce, r.priv_loss, mi, r.val_accuracy, r.wall_secs
        ));
    }
    std::fs::write(path, out).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}
