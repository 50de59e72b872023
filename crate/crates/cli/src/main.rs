//! `lpmii` — synthetic-data generation, label derivation, training, and
//! leave-one-domain-out comparisons from one binary.
//!
//! Every subcommand takes its full configuration from a TOML file whose
//! fields all have defaults; individual flags override the file. A single
//! master seed controls all randomness, so any invocation is reproducible.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lpmii_core::checkpoint;
use lpmii_core::data::{
    generate_synthetic, load_domains, read_pgm, DomainDataset, SynthSpec, N_FLUID_CLASSES,
};
use lpmii_core::harness::{emit_results, run_lodo, LodoConfig, MethodSummary, RunRecord};
use lpmii_core::labels::SegMask;
use lpmii_core::trainer::{train, write_history_csv, Objective, TrainConfig};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "lpmii",
    version,
    about = "Privileged-information training on synthetic multi-vendor OCT-like data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic multi-domain dataset.
    GenData {
        /// Generator spec (TOML); omit for the built-in default spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output root; one subdirectory per domain.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the spec's slices per domain.
        #[arg(long)]
        slices: Option<usize>,
        /// Override the spurious-correlation switch.
        #[arg(long)]
        spurious: Option<bool>,
    },
    /// Recompute privileged labels from masks and print them as CSV.
    DeriveLabels {
        /// Dataset root (all domains) or a single domain directory.
        #[arg(long, conflicts_with = "mask")]
        data: Option<PathBuf>,
        /// A single mask PGM to inspect instead of a dataset.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Severity scale (number of non-zero severity levels).
        #[arg(long, default_value_t = 5)]
        n_sc: u8,
    },
    /// Train one model on all domains under --data.
    Train {
        /// Training config (TOML); omit for defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Run directory: checkpoint, history.csv, resolved config.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Leave-one-domain-out comparison of methods.
    Lodo {
        /// Harness config (TOML); omit for defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated: erm,lpmii-severity,lpmii-mass.
        #[arg(long)]
        methods: Option<String>,
        /// Number of seeds per fold.
        #[arg(long)]
        seeds: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Recompute aggregate tables from raw results.csv files.
    Report {
        /// One or more directories containing results.csv (or the files
        /// themselves). With several inputs — e.g. one LODO run per fluid
        /// class — each table is printed separately followed by their pooled
        /// mean.
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
    },
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData {
            spec,
            out,
            seed,
            slices,
            spurious,
        } => gen_data(spec.as_deref(), &out, seed, slices, spurious),
        Cmd::DeriveLabels { data, mask, n_sc } => derive_labels(data, mask, n_sc),
        Cmd::Train {
            config,
            data,
            out,
            objective,
            alpha,
            epochs,
            seed,
        } => cmd_train(config, &data, &out, objective, alpha, epochs, seed),
        Cmd::Lodo {
            config,
            data,
            out,
            methods,
            seeds,
            seed,
            epochs,
            alpha,
        } => cmd_lodo(config, &data, &out, methods, seeds, seed, epochs, alpha),
        Cmd::Report { results } => report(&results),
    }
}

fn gen_data(
    spec_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    slices: Option<usize>,
    spurious: Option<bool>,
) -> Result<()> {
    let mut spec: SynthSpec = match spec_path {
        Some(path) => read_toml(Some(path))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = slices {
        spec.slices_per_domain = n;
    }
    if let Some(on) = spurious {
        spec.spurious.enabled = on;
    }
    generate_synthetic(&spec, out)?;
    let snapshot = toml::to_string_pretty(&spec)?;
    fs::write(out.join("gen-spec.toml"), snapshot)?;
    println!(
        "generated {} domains x {} slices ({}x{}) under {}",
        spec.domains.len(),
        spec.slices_per_domain,
        spec.height,
        spec.width,
        out.display()
    );
    Ok(())
}

fn print_label_row(id: &str, mask: &SegMask, n_sc: u8) -> Result<()> {
    let mut row = format!("{id}");
    for class in 1..=N_FLUID_CLASSES {
        row.push_str(&format!(
            ",{},{},{}",
            mask.fluid_mass(class)?,
            mask.severity(class, n_sc)?,
            mask.presence_label(class)?
        ));
    }
    println!("{row}");
    Ok(())
}

fn derive_labels(data: Option<PathBuf>, mask: Option<PathBuf>, n_sc: u8) -> Result<()> {
    println!(
        "id,mass_1,severity_1,presence_1,mass_2,severity_2,presence_2,mass_3,severity_3,presence_3"
    );
    if let Some(mask_path) = mask {
        let (h, w, pixels) = read_pgm(&mask_path)?;
        let mask = SegMask::new(h, w, N_FLUID_CLASSES, pixels)?;
        let id = mask_path.file_stem().unwrap_or_default().to_string_lossy();
        print_label_row(&id, &mask, n_sc)?;
        return Ok(());
    }
    let root = data.context("pass --data DIR or --mask FILE")?;
    for domain in load_tree(&root, n_sc)? {
        for s in domain.samples() {
            print_label_row(&format!("{}/{}", domain.domain_id(), s.id), &s.mask, n_sc)?;
        }
    }
    Ok(())
}

/// Load either a dataset root (domain subdirectories) or one domain dir.
fn load_tree(root: &Path, n_sc: u8) -> Result<Vec<DomainDataset>> {
    if root.join("manifest.csv").is_file() {
        Ok(vec![lpmii_core::data::load_dataset(root, n_sc)?])
    } else {
        Ok(load_domains(root, n_sc)?)
    }
}

fn cmd_train(
    config_path: Option<PathBuf>,
    data: &Path,
    out: &Path,
    objective: Option<String>,
    alpha: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut config: TrainConfig = read_toml(config_path.as_deref())?;
    if let Some(name) = objective {
        let obj = Objective::parse(&name)
            .with_context(|| format!("unknown objective {name}; use erm, lpmii-severity, or lpmii-mass"))?;
        config = config.with_objective(obj);
    } else {
        // Keep the head coherent even when the objective comes from the file.
        config = config.clone().with_objective(config.objective);
    }
    if let Some(a) = alpha {
        config.alpha = a;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(s) = seed {
        config.seed = s;
    }

    let domains = load_domains(data, config.model.n_sc)?;
    let outcome = train(&config, &domains)?;

    fs::create_dir_all(out)?;
    let digest = checkpoint::config_digest(&config);
    checkpoint::save(&out.join("checkpoint.ckpt"), &outcome.params, &digest)?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    fs::write(out.join("config.toml"), toml::to_string_pretty(&config)?)?;

    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "trained {} for {} epochs on {} domain(s); selected epoch {} (val accuracy {:.4})",
        config.objective,
        config.epochs,
        domains.len(),
        outcome.best_epoch,
        best.val_accuracy
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lodo(
    config_path: Option<PathBuf>,
    data: &Path,
    out: &Path,
    methods: Option<String>,
    seeds: Option<usize>,
    seed: Option<u64>,
    epochs: Option<usize>,
    alpha: Option<f64>,
) -> Result<()> {
    let mut config: LodoConfig = read_toml(config_path.as_deref())?;
    if let Some(spec) = methods {
        config.methods = spec
            .split(',')
            .map(|m| {
                Objective::parse(m.trim())
                    .with_context(|| format!("unknown method {m}; use erm, lpmii-severity, or lpmii-mass"))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(n) = seeds {
        config.n_seeds = n;
    }
    if let Some(s) = seed {
        config.master_seed = s;
    }
    if let Some(e) = epochs {
        config.base.epochs = e;
    }
    if let Some(a) = alpha {
        config.base.alpha = a;
    }

    let domains = load_domains(data, config.base.model.n_sc)?;
    let outcome = run_lodo(&domains, &config)?;
    emit_results(&outcome, out)?;
    fs::write(out.join("lodo-config.toml"), toml::to_string_pretty(&config)?)?;

    print!("{}", fs::read_to_string(out.join("results.md"))?);
    Ok(())
}

fn parse_results(results: &Path) -> Result<(Vec<Objective>, Vec<RunRecord>)> {
    let csv_path = if results.is_dir() {
        results.join("results.csv")
    } else {
        results.to_path_buf()
    };
    let text =
        fs::read_to_string(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty results.csv")?;
    let expect = "method,test_domain,seed_index,run_seed,best_epoch,top1,class_weighted";
    if header != expect {
        bail!("unexpected header in {}: {header}", csv_path.display());
    }

    let mut order: Vec<Objective> = Vec::new();
    let mut records: Vec<RunRecord> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("line {}: expected 7 fields, got {}", lineno + 2, fields.len());
        }
        let parse_err = |what: &str| format!("line {}: bad {what}", lineno + 2);
        let method =
            Objective::parse(fields[0]).with_context(|| parse_err("method"))?;
        if !order.contains(&method) {
            order.push(method);
        }
        records.push(RunRecord {
            method,
            test_domain: fields[1].to_string(),
            seed_index: fields[2].parse().with_context(|| parse_err("seed_index"))?,
            run_seed: fields[3].parse().with_context(|| parse_err("run_seed"))?,
            best_epoch: fields[4].parse().with_context(|| parse_err("best_epoch"))?,
            top1: fields[5].parse().with_context(|| parse_err("top1"))?,
            class_weighted: fields[6].parse().with_context(|| parse_err("class_weighted"))?,
        });
    }
    if records.is_empty() {
        bail!("{} has no runs", csv_path.display());
    }
    Ok((order, records))
}

fn print_table(order: &[Objective], records: &[RunRecord]) {
    println!(
        "{} runs across {} method(s); mean ± population std of per-seed fold-means:",
        records.len(),
        order.len()
    );
    println!("| method | top-1 accuracy | class-weighted accuracy |");
    println!("|---|---|---|");
    for &method in order {
        let rs: Vec<RunRecord> = records
            .iter()
            .filter(|r| r.method == method)
            .cloned()
            .collect();
        let s = MethodSummary::from_records(method, rs);
        println!(
            "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
            s.method, s.mean_top1, s.std_top1, s.mean_class_weighted, s.std_class_weighted
        );
    }
}

fn report(inputs: &[PathBuf]) -> Result<()> {
    let mut pooled_order: Vec<Objective> = Vec::new();
    let mut pooled: Vec<RunRecord> = Vec::new();
    for (i, path) in inputs.iter().enumerate() {
        let (order, records) = parse_results(path)?;
        if inputs.len() > 1 {
            if i > 0 {
                println!();
            }
            println!("## {}", path.display());
        }
        print_table(&order, &records);
        for m in order {
            if !pooled_order.contains(&m) {
                pooled_order.push(m);
            }
        }
        pooled.extend(records);
    }
    if inputs.len() > 1 {
        println!();
        println!("## mean across {} inputs", inputs.len());
        print_table(&pooled_order, &pooled);
    }
    Ok(())
}
