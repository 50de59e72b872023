//! Leave-one-domain-out (LODO) experiment harness.
//!
//! For every fold one domain is held out as the test set and the remaining
//! domains train the model; every method × fold × seed combination is one
//! training run. Within a fold and seed, all methods share the same derived
//! run seed, hence identical parameter initializations (for shared tensors),
//! validation splits, and batch orders — observed metric differences are
//! attributable to the objective alone.
//!
//! Aggregation convention: for each method and seed, fold accuracies are
//! averaged into a per-seed mean; the reported value is the mean ± population
//! standard deviation of those per-seed means. The convention is restated in
//! the emitted `results.md` header.

use crate::data::DomainDataset;
use crate::model::{BatchData, ModelError, ModelParams};
use crate::seed::{derive_seed, STREAM_RUN};
use crate::trainer::{train, Objective, TrainConfig, TrainError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid harness config: {0}")]
    InvalidConfig(String),
    #[error("leave-one-domain-out needs >= 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("test domain {0} has no samples")]
    EmptyTestSet(String),
    #[error("leakage in fold {fold}: sample {id} appears in both {sets}")]
    Leakage {
        fold: String,
        id: String,
        sets: &'static str,
    },
    #[error("run failed (method {method}, fold {fold}, seed index {seed_index}): {source}")]
    Run {
        method: Objective,
        fold: String,
        seed_index: usize,
        source: TrainError,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One leave-one-domain-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub test_domain: String,
    pub train_domains: Vec<String>,
}

/// One fold per domain: that domain tests, the complement trains.
pub fn make_folds(domain_ids: &[&str]) -> Result<Vec<FoldSpec>, HarnessError> {
    if domain_ids.len() < 2 {
        return Err(HarnessError::TooFewDomains(domain_ids.len()));
    }
    let unique: HashSet<_> = domain_ids.iter().collect();
    if unique.len() != domain_ids.len() {
        return Err(HarnessError::InvalidConfig(
            "duplicate domain ids".to_string(),
        ));
    }
    Ok(domain_ids
        .iter()
        .map(|&test| FoldSpec {
            test_domain: test.to_string(),
            train_domains: domain_ids
                .iter()
                .filter(|&&d| d != test)
                .map(|&d| d.to_string())
                .collect(),
        })
        .collect())
}

/// Held-out-domain accuracy metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Fraction of correct predictions.
    pub top1: f64,
    /// Mean of per-class recalls over the classes present in the ground
    /// truth; robust to class imbalance.
    pub class_weighted: f64,
}

/// Deterministic evaluation (μ encoding) of a trained model on one domain.
pub fn evaluate(
    params: &ModelParams,
    domain: &DomainDataset,
    fluid_class: u8,
    batch_size: usize,
) -> Result<Metrics, HarnessError> {
    if domain.is_empty() {
        return Err(HarnessError::EmptyTestSet(domain.domain_id().to_string()));
    }
    assert!(batch_size > 0, "batch_size must be positive");
    let pool: Vec<&crate::data::Sample> = domain.samples().iter().collect();
    let indices: Vec<usize> = (0..pool.len()).collect();
    let mut hits = [0usize; 2];
    let mut support = [0usize; 2];
    for chunk in indices.chunks(batch_size) {
        let data = BatchData::collate(&pool, chunk, fluid_class, params.config())?;
        let preds = params.predict_batch(&data.x)?;
        for (p, &y) in preds.iter().zip(&data.y) {
            support[y] += 1;
            if *p == y {
                hits[y] += 1;
            }
        }
    }
    let total: usize = support.iter().sum();
    let correct: usize = hits.iter().sum();
    let recalls: Vec<f64> = (0..2)
        .filter(|&c| support[c] > 0)
        .map(|c| hits[c] as f64 / support[c] as f64)
        .collect();
    Ok(Metrics {
        top1: correct as f64 / total as f64,
        class_weighted: recalls.iter().sum::<f64>() / recalls.len() as f64,
    })
}

/// Configuration of a full LODO comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LodoConfig {
    /// Methods to compare; emitted with the `erm` baseline row first.
    pub methods: Vec<Objective>,
    /// Independent repetitions; seed index `s` of fold `f` uses the run seed
    /// derived from `(master_seed, STREAM_RUN, f, s)` for every method.
    pub n_seeds: usize,
    pub master_seed: u64,
    /// Template for each run; `objective`, matching privileged head, and
    /// `seed` are overridden per run.
    pub base: TrainConfig,
}

impl Default for LodoConfig {
    fn default() -> Self {
        Self {
            methods: Objective::ALL.to_vec(),
            n_seeds: 5,
            master_seed: 0,
            base: TrainConfig::default(),
        }
    }
}

impl LodoConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() {
            return Err(HarnessError::InvalidConfig("no methods".to_string()));
        }
        let unique: HashSet<_> = self.methods.iter().collect();
        if unique.len() != self.methods.len() {
            return Err(HarnessError::InvalidConfig(
                "duplicate methods".to_string(),
            ));
        }
        if self.n_seeds == 0 {
            return Err(HarnessError::InvalidConfig("n_seeds must be >= 1".to_string()));
        }
        self.base
            .clone()
            .with_objective(self.base.objective)
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }
}

/// Outcome of one training run on one fold with one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Objective,
    pub test_domain: String,
    pub seed_index: usize,
    pub run_seed: u64,
    pub best_epoch: usize,
    pub top1: f64,
    pub class_weighted: f64,
}

/// All runs of one method plus their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Objective,
    /// Sorted by (fold, seed index).
    pub records: Vec<RunRecord>,
    pub mean_top1: f64,
    pub std_top1: f64,
    pub mean_class_weighted: f64,
    pub std_class_weighted: f64,
}

/// Mean ± population std of per-seed fold-means.
fn aggregate(records: &[RunRecord], value: impl Fn(&RunRecord) -> f64) -> (f64, f64) {
    let mut seeds: Vec<usize> = records.iter().map(|r| r.seed_index).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let per_seed: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.seed_index == s)
                .map(&value)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MethodSummary {
    pub fn from_records(method: Objective, records: Vec<RunRecord>) -> Self {
        let (mean_top1, std_top1) = aggregate(&records, |r| r.top1);
        let (mean_class_weighted, std_class_weighted) =
            aggregate(&records, |r| r.class_weighted);
        Self {
            method,
            records,
            mean_top1,
            std_top1,
            mean_class_weighted,
            std_class_weighted,
        }
    }
}

/// Results of a LODO comparison; method order follows the config.
#[derive(Debug)]
pub struct LodoOutcome {
    pub config: LodoConfig,
    pub folds: Vec<FoldSpec>,
    pub summaries: Vec<MethodSummary>,
}

fn audit_disjoint(
    fold: &str,
    a: &[String],
    b: &[String],
    sets: &'static str,
) -> Result<(), HarnessError> {
    let set: HashSet<&String> = a.iter().collect();
    if let Some(id) = b.iter().find(|id| set.contains(id)) {
        return Err(HarnessError::Leakage {
            fold: fold.to_string(),
            id: id.clone(),
            sets,
        });
    }
    Ok(())
}

/// Audit one run's split hygiene: train, validation, and test sample ids must
/// be pairwise disjoint.
pub fn audit_no_leakage(
    fold: &str,
    train_ids: &[String],
    val_ids: &[String],
    test_ids: &[String],
) -> Result<(), HarnessError> {
    audit_disjoint(fold, train_ids, val_ids, "train and validation")?;
    audit_disjoint(fold, train_ids, test_ids, "train and test")?;
    audit_disjoint(fold, val_ids, test_ids, "validation and test")?;
    Ok(())
}

/// Run the full methods × folds × seeds grid and aggregate per method.
pub fn run_lodo(
    domains: &[DomainDataset],
    config: &LodoConfig,
) -> Result<LodoOutcome, HarnessError> {
    config.validate()?;
    let ids: Vec<&str> = domains.iter().map(|d| d.domain_id()).collect();
    let folds = make_folds(&ids)?;

    let mut jobs = Vec::new();
    for fold_idx in 0..folds.len() {
        for seed_index in 0..config.n_seeds {
            let run_seed = derive_seed(
                config.master_seed,
                &[STREAM_RUN, fold_idx as u64, seed_index as u64],
            );
            for &method in &config.methods {
                jobs.push((fold_idx, seed_index, run_seed, method));
            }
        }
    }

    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(fold_idx, seed_index, run_seed, method)| {
            let fold = &folds[fold_idx];
            let tag_err = |source: TrainError| HarnessError::Run {
                method,
                fold: fold.test_domain.clone(),
                seed_index,
                source,
            };
            let train_domains: Vec<DomainDataset> = domains
                .iter()
                .filter(|d| fold.train_domains.contains(&d.domain_id().to_string()))
                .cloned()
                .collect();
            let test_domain = domains
                .iter()
                .find(|d| d.domain_id() == fold.test_domain)
                .expect("fold test domain exists");

            let mut run_cfg = config.base.clone().with_objective(method);
            run_cfg.seed = run_seed;
            let outcome = train(&run_cfg, &train_domains).map_err(tag_err)?;

            let test_ids: Vec<String> =
                test_domain.samples().iter().map(|s| s.id.clone()).collect();
            audit_no_leakage(
                &fold.test_domain,
                &outcome.train_ids,
                &outcome.val_ids,
                &test_ids,
            )?;

            let metrics = evaluate(
                &outcome.params,
                test_domain,
                run_cfg.fluid_class,
                run_cfg.batch_size,
            )?;
            Ok(RunRecord {
                method,
                test_domain: fold.test_domain.clone(),
                seed_index,
                run_seed,
                best_epoch: outcome.best_epoch,
                top1: metrics.top1,
                class_weighted: metrics.class_weighted,
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let summaries = config
        .methods
        .iter()
        .map(|&method| {
            let mut rs: Vec<RunRecord> = records
                .iter()
                .filter(|r| r.method == method)
                .cloned()
                .collect();
            rs.sort_by(|a, b| {
                (&a.test_domain, a.seed_index).cmp(&(&b.test_domain, b.seed_index))
            });
            MethodSummary::from_records(method, rs)
        })
        .collect();

    Ok(LodoOutcome {
        config: config.clone(),
        folds,
        summaries,
    })
}

/// Baseline first, then the remaining methods in config order.
fn emit_order(summaries: &[MethodSummary]) -> Vec<&MethodSummary> {
    let mut out: Vec<&MethodSummary> = summaries
        .iter()
        .filter(|s| s.method == Objective::Erm)
        .collect();
    out.extend(summaries.iter().filter(|s| s.method != Objective::Erm));
    out
}

/// Write `results.csv` (raw per-run values) and `results.md` (aggregate
/// table) into `dir`. Both files are deterministic functions of the outcome.
pub fn emit_results(outcome: &LodoOutcome, dir: &Path) -> Result<(), HarnessError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut csv =
        String::from("method,test_domain,seed_index,run_seed,best_epoch,top1,class_weighted\n");
    for s in emit_order(&outcome.summaries) {
        for r in &s.records {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method, r.test_domain, r.seed_index, r.run_seed, r.best_epoch, r.top1,
                r.class_weighted
            ));
        }
    }
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;

    let c = &outcome.config;
    let mut md = String::new();
    md.push_str("# Leave-one-domain-out results\n\n");
    md.push_str(&format!(
        "Domains: {}. {} seed(s) per fold, master seed {}.\n",
        outcome
            .folds
            .iter()
            .map(|f| f.test_domain.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        c.n_seeds,
        c.master_seed
    ));
    md.push_str(&format!(
        "Training: {} epochs, batch {}, {:?} lr {}, alpha {}, validation fraction {}, \
         model {}x{} conv {:?} latent {}.\n",
        c.base.epochs,
        c.base.batch_size,
        c.base.optim.kind,
        c.base.optim.lr,
        c.base.alpha,
        c.base.val_fraction,
        c.base.model.height,
        c.base.model.width,
        c.base.model.conv_channels,
        c.base.model.latent_dim
    ));
    md.push_str(
        "Each cell is the mean ± population standard deviation of per-seed fold-means \
         on the held-out domain.\n\n",
    );
    md.push_str("| method | top-1 accuracy | class-weighted accuracy |\n");
    md.push_str("|---|---|---|\n");
    for s in emit_order(&outcome.summaries) {
        md.push_str(&format!(
            "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} |\n",
            s.method, s.mean_top1, s.std_top1, s.mean_class_weighted, s.std_class_weighted
        ));
    }
    let md_path = dir.join("results.md");
    std::fs::write(&md_path, md).map_err(io_err(&md_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainDataset, Sample, N_FLUID_CLASSES};
    use crate::labels::SegMask;
    use crate::model::ModelConfig;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Same construction as the trainer's toy data: positives carry a dark
    /// masked block, negatives are plain background, labels alternate.
    fn toy_domain(name: &str, n: usize, seed: u64) -> DomainDataset {
        let (h, w) = (8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let y = (i % 2) as u8;
                let mut image = vec![0u8; h * w];
                let mut mask = vec![0u8; h * w];
                for r in 0..h {
                    for c in 0..w {
                        let jitter: i16 = rng.random_range(-12..=12);
                        let base = if y == 1 && r < 3 && c < 3 {
                            mask[r * w + c] = 1;
                            40i16
                        } else {
                            200i16
                        };
                        image[r * w + c] = (base + jitter).clamp(0, 255) as u8;
                    }
                }
                Sample {
                    id: format!("{name}_{i:04}"),
                    image,
                    mask: SegMask::new(h, w, N_FLUID_CLASSES, mask).unwrap(),
                }
            })
            .collect();
        DomainDataset::new(name.to_string(), h, w, samples).unwrap()
    }

    /// A skewed domain: `n_pos` positives then negatives up to `n`.
    fn skewed_domain(name: &str, n: usize, n_pos: usize) -> DomainDataset {
        let (h, w) = (8, 8);
        let samples = (0..n)
            .map(|i| {
                let y = (i < n_pos) as u8;
                let mut image = vec![200u8; h * w];
                let mut mask = vec![0u8; h * w];
                if y == 1 {
                    for r in 0..3 {
                        for c in 0..3 {
                            image[r * w + c] = 40;
                            mask[r * w + c] = 1;
                        }
                    }
                }
                Sample {
                    id: format!("{name}_{i:04}"),
                    image,
                    mask: SegMask::new(h, w, N_FLUID_CLASSES, mask).unwrap(),
                }
            })
            .collect();
        DomainDataset::new(name.to_string(), h, w, samples).unwrap()
    }

    fn tiny_base() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            model: ModelConfig {
                height: 8,
                width: 8,
                conv_channels: vec![4],
                latent_dim: 8,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn make_folds_tests_each_domain_exactly_once() {
        let folds = make_folds(&["cirrus", "spectralis", "topcon"]).unwrap();
        assert_eq!(folds.len(), 3);
        for fold in &folds {
            assert_eq!(fold.train_domains.len(), 2);
            assert!(!fold.train_domains.contains(&fold.test_domain));
            let mut union = fold.train_domains.clone();
            union.push(fold.test_domain.clone());
            union.sort();
            assert_eq!(union, vec!["cirrus", "spectralis", "topcon"]);
        }
        let tested: Vec<&str> = folds.iter().map(|f| f.test_domain.as_str()).collect();
        assert_eq!(tested, vec!["cirrus", "spectralis", "topcon"]);

        assert_eq!(make_folds(&["a", "b"]).unwrap().len(), 2);
        assert!(matches!(
            make_folds(&["only"]),
            Err(HarnessError::TooFewDomains(1))
        ));
        assert!(make_folds(&["a", "a"]).is_err());
    }

    #[test]
    fn constant_predictor_on_imbalanced_set_scores_point_nine_and_half() {
        // Zeroed classifier outputs equal logits; argmax ties resolve to
        // class 0, so the model constantly predicts "no fluid".
        let config = tiny_base().model;
        let mut params = ModelParams::init(config, 0).unwrap();
        for (name, t) in params.named_tensors_mut() {
            if name.starts_with("classifier.") {
                t.data_mut().fill(0.0);
            }
        }
        let domain = skewed_domain("skew", 100, 10);
        let m = evaluate(&params, &domain, 1, 16).unwrap();
        assert!((m.top1 - 0.9).abs() < 1e-12);
        assert!((m.class_weighted - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_model_scores_one_on_both_metrics() {
        let domains = [toy_domain("a", 32, 2)];
        let mut cfg = tiny_base().with_objective(Objective::Erm);
        cfg.epochs = 400;
        cfg.batch_size = 32;
        cfg.optim.lr = 5e-3;
        cfg.seed = 7;
        let out = train(&cfg, &domains).unwrap();
        let m = evaluate(&out.params, &domains[0], 1, 16).unwrap();
        assert_eq!(m.top1, 1.0);
        assert_eq!(m.class_weighted, 1.0);
    }

    #[test]
    fn evaluate_matches_brute_force_recount() {
        // Random (untrained) parameters against an independent per-sample loop.
        let config = tiny_base().model;
        let mut params = ModelParams::init(config.clone(), 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        params.randomize(&mut rng, 0.8);
        let domain = toy_domain("recount", 41, 11);

        let m = evaluate(&params, &domain, 1, 7).unwrap();

        let mut confusion = [[0usize; 2]; 2];
        for s in domain.samples() {
            let pool = [s];
            let data = BatchData::collate(&pool, &[0], 1, &config).unwrap();
            let pred = params.predict_batch(&data.x).unwrap()[0];
            confusion[data.y[0]][pred] += 1;
        }
        let correct = confusion[0][0] + confusion[1][1];
        let total: usize = confusion.iter().flatten().sum();
        let recall0 = confusion[0][0] as f64 / (confusion[0][0] + confusion[0][1]) as f64;
        let recall1 = confusion[1][1] as f64 / (confusion[1][0] + confusion[1][1]) as f64;
        assert!((m.top1 - correct as f64 / total as f64).abs() < 1e-15);
        assert!((m.class_weighted - (recall0 + recall1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lodo_grid_counts_and_shares_run_seeds_across_methods() {
        let domains = [
            toy_domain("a", 20, 1),
            toy_domain("b", 20, 2),
            toy_domain("c", 20, 3),
        ];
        let config = LodoConfig {
            methods: vec![Objective::Erm, Objective::LpmiiSeverity],
            n_seeds: 2,
            master_seed: 5,
            base: tiny_base(),
        };
        let outcome = run_lodo(&domains, &config).unwrap();
        assert_eq!(outcome.summaries.len(), 2);
        let total_runs: usize = outcome.summaries.iter().map(|s| s.records.len()).sum();
        assert_eq!(total_runs, 3 * 2 * 2, "folds x seeds x methods");

        // Every (fold, seed) pair appears once per method with equal run seeds.
        let erm = &outcome.summaries[0];
        let sev = &outcome.summaries[1];
        assert_eq!(erm.records.len(), sev.records.len());
        for (a, b) in erm.records.iter().zip(&sev.records) {
            assert_eq!(a.test_domain, b.test_domain);
            assert_eq!(a.seed_index, b.seed_index);
            assert_eq!(a.run_seed, b.run_seed, "methods must share derived seeds");
        }
        // Aggregates are recomputable from the raw records.
        for s in &outcome.summaries {
            let again = MethodSummary::from_records(s.method, s.records.clone());
            assert_eq!(s.mean_top1.to_bits(), again.mean_top1.to_bits());
            assert_eq!(s.std_top1.to_bits(), again.std_top1.to_bits());
        }
    }

    #[test]
    fn lodo_results_are_byte_identical_across_reruns() {
        let domains = [toy_domain("a", 16, 1), toy_domain("b", 16, 2)];
        let config = LodoConfig {
            methods: vec![Objective::Erm, Objective::LpmiiSeverity],
            n_seeds: 2,
            master_seed: 11,
            base: tiny_base(),
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_results(&run_lodo(&domains, &config).unwrap(), d1.path()).unwrap();
        emit_results(&run_lodo(&domains, &config).unwrap(), d2.path()).unwrap();
        for name in ["results.csv", "results.md"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across reruns");
        }
    }

    #[test]
    fn emit_results_formats_mean_and_population_std() {
        let rec = |seed_index: usize, domain: &str, v: f64| RunRecord {
            method: Objective::Erm,
            test_domain: domain.to_string(),
            seed_index,
            run_seed: 0,
            best_epoch: 1,
            top1: v,
            class_weighted: v,
        };
        // Two seeds whose fold-means are 0.8 and 1.0.
        let spread = MethodSummary::from_records(
            Objective::Erm,
            vec![rec(0, "a", 0.8), rec(1, "a", 1.0)],
        );
        assert!((spread.mean_top1 - 0.9).abs() < 1e-12);
        assert!((spread.std_top1 - 0.1).abs() < 1e-12);

        // One seed, three folds, no dispersion across seeds.
        let flat = MethodSummary::from_records(
            Objective::LpmiiSeverity,
            vec![rec(0, "a", 0.9), rec(0, "b", 0.9), rec(0, "c", 0.9)],
        );
        assert!((flat.mean_top1 - 0.9).abs() < 1e-12);
        assert_eq!(flat.std_top1, 0.0);

        let outcome = LodoOutcome {
            config: LodoConfig {
                // Baseline listed last on purpose; emission reorders.
                methods: vec![Objective::LpmiiSeverity, Objective::Erm],
                n_seeds: 2,
                master_seed: 0,
                base: tiny_base(),
            },
            folds: make_folds(&["a", "b"]).unwrap(),
            summaries: vec![flat, spread],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_results(&outcome, dir.path()).unwrap();
        let md = std::fs::read_to_string(dir.path().join("results.md")).unwrap();
        assert!(md.contains("| erm | 0.900 ± 0.100 | 0.900 ± 0.100 |"));
        assert!(md.contains("| lpmii-severity | 0.900 ± 0.000 | 0.900 ± 0.000 |"));
        let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ")).collect();
        assert_eq!(rows.len(), 1 + 2, "header row + one row per method");
        assert!(rows[1].starts_with("| erm"), "baseline row comes first");

        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 5);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("erm,"));
    }

    #[test]
    fn audit_catches_planted_leakage() {
        let train = vec!["a_0".to_string(), "a_1".to_string()];
        let val = vec!["a_2".to_string()];
        let test = vec!["b_0".to_string(), "b_1".to_string()];
        assert!(audit_no_leakage("b", &train, &val, &test).is_ok());

        let poisoned = vec!["b_1".to_string(), "a_9".to_string()];
        let err = audit_no_leakage("b", &poisoned, &val, &test).unwrap_err();
        assert!(
            matches!(err, HarnessError::Leakage { ref fold, ref id, sets }
                if fold == "b" && id == "b_1" && sets == "train and test")
        );

        let val_overlap = vec!["a_0".to_string()];
        assert!(matches!(
            audit_no_leakage("b", &train, &val_overlap, &test),
            Err(HarnessError::Leakage { sets: "train and validation", .. })
        ));
    }

    #[test]
    fn lodo_rejects_single_domain_and_bad_config() {
        let domains = [toy_domain("a", 16, 1)];
        let config = LodoConfig {
            base: tiny_base(),
            ..LodoConfig::default()
        };
        assert!(matches!(
            run_lodo(&domains, &config),
            Err(HarnessError::TooFewDomains(1))
        ));

        let bad = LodoConfig {
            methods: vec![],
            base: tiny_base(),
            ..LodoConfig::default()
        };
        assert!(bad.validate().is_err());
        let dup = LodoConfig {
            methods: vec![Objective::Erm, Objective::Erm],
            base: tiny_base(),
            ..LodoConfig::default()
        };
        assert!(dup.validate().is_err());
        let zero_seeds = LodoConfig {
            n_seeds: 0,
            base: tiny_base(),
            ..LodoConfig::default()
        };
        assert!(zero_seeds.validate().is_err());
    }
}
