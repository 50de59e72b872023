//! Synthetic multi-vendor OCT-like B-scan generator.
//!
//! Every domain shares the same anatomy model — smooth horizontal intensity
//! bands with occasional dark elliptical fluid pockets drawn into both the
//! image and the mask — while the acquisition style (speckle amplitude and
//! grain, contrast gamma, brightness offset, horizontal banding) differs per
//! domain. That reproduces the structure of real multi-vendor data: task
//! geometry is domain-independent, pixel statistics are not.
//!
//! An optional spurious-correlation knob additionally ties a global
//! brightness cue to the presence label with a per-domain correlation. With
//! the default correlations `[0.97, 0.5, 0.97]` the cue is highly predictive
//! in two domains and pure noise in the third, so a model that leans on it
//! wins in-domain and drops to coin-flip cue votes when the decorrelated
//! domain is held out — exactly the failure mode privileged supervision is
//! meant to prevent. The cue polarity is global (bright = fluid wherever the
//! cue is informative), so models never face contradictory polarities across
//! training domains, and the decorrelated domain is the one with the mildest
//! noise style, so genuine fluid features transfer there. The cue never
//! touches the mask, so privileged labels stay cue-free.
//!
//! Blob edges are feathered in the *image only*: intensity ramps smoothly
//! across the mask boundary (half strength exactly on it), while the mask
//! keeps the hard ellipse. Together with the default low darkening contrast
//! this makes the pocket area genuinely ambiguous at the pixel level — exact
//! pixel counts are not recoverable from the image, but coarse severity
//! grades are — and keeps the presence label hard enough that a classifier
//! trained on images alone prefers the brightness shortcut.

use super::dataset::{write_manifest, write_sample, N_FLUID_CLASSES};
use super::DataError;
use crate::labels::SegMask;
use crate::seed::{stream, STREAM_DATAGEN};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Acquisition-style parameters for one domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainNoise {
    /// Multiplicative speckle amplitude.
    pub speckle_amp: f64,
    /// Box-blur radius of the speckle field, in pixels (its grain size).
    pub speckle_grain: usize,
    /// Contrast exponent applied to the clamped image.
    pub gamma: f64,
    /// Additive brightness offset.
    pub brightness: f64,
    /// Amplitude of horizontal banding.
    pub band_amp: f64,
    /// Banding period in rows.
    pub band_period: f64,
}

impl Default for DomainNoise {
    fn default() -> Self {
        Self {
            speckle_amp: 0.18,
            speckle_grain: 1,
            gamma: 1.0,
            brightness: 0.0,
            band_amp: 0.02,
            band_period: 8.0,
        }
    }
}

/// Spurious-correlation knob settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousSpec {
    pub enabled: bool,
    /// Magnitude of the global brightness cue (sign encodes the cue bit).
    pub cue_strength: f64,
    /// Per-domain P(cue agrees with label); 0.5 = uninformative.
    pub correlations: Vec<f64>,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            cue_strength: 0.16,
            correlations: vec![0.97, 0.5, 0.97],
        }
    }
}

/// Full description of a synthetic dataset; generation is a pure function of
/// this struct (including `seed`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub domains: Vec<String>,
    pub slices_per_domain: usize,
    pub height: usize,
    pub width: usize,
    /// Probability that a slice contains fluid.
    pub presence_rate: f64,
    /// Mask class the generator draws (other classes stay empty).
    pub fluid_class: u8,
    /// Severity scale used for the manifest's label columns.
    pub n_sc: u8,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Blob semi-axes as fractions of image side length.
    pub min_radius_frac: f64,
    pub max_radius_frac: f64,
    /// Multiplicative darkening factor range for blob interiors (closer to 1
    /// means lower contrast against the background).
    pub dark_min: f64,
    pub dark_max: f64,
    /// Width of the smooth intensity ramp at blob edges, as a fraction of the
    /// blob radius; 0 gives hard edges. Applies to the image only — the mask
    /// boundary stays hard.
    pub edge_feather: f64,
    /// One noise style per domain.
    pub noise: Vec<DomainNoise>,
    pub spurious: SpuriousSpec,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            domains: vec![
                "cirrus".to_string(),
                "spectralis".to_string(),
                "topcon".to_string(),
            ],
            slices_per_domain: 2000,
            height: 64,
            width: 64,
            presence_rate: 0.5,
            fluid_class: 1,
            n_sc: 5,
            min_blobs: 1,
            max_blobs: 3,
            min_radius_frac: 0.06,
            max_radius_frac: 0.18,
            dark_min: 0.55,
            dark_max: 0.80,
            edge_feather: 0.20,
            noise: vec![
                DomainNoise {
                    speckle_amp: 0.18,
                    speckle_grain: 1,
                    gamma: 1.0,
                    brightness: 0.0,
                    band_amp: 0.03,
                    band_period: 6.0,
                },
                DomainNoise {
                    speckle_amp: 0.10,
                    speckle_grain: 3,
                    gamma: 1.3,
                    brightness: 0.05,
                    band_amp: 0.015,
                    band_period: 11.0,
                },
                DomainNoise {
                    speckle_amp: 0.25,
                    speckle_grain: 2,
                    gamma: 0.7,
                    brightness: -0.06,
                    band_amp: 0.05,
                    band_period: 4.0,
                },
            ],
            spurious: SpuriousSpec::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |msg: String| Err(DataError::InvalidSpec(msg));
        if self.domains.len() < 2 {
            return fail(format!("need >= 2 domains, got {}", self.domains.len()));
        }
        if self.noise.len() != self.domains.len() {
            return fail(format!(
                "{} noise styles for {} domains",
                self.noise.len(),
                self.domains.len()
            ));
        }
        if self.spurious.enabled && self.spurious.correlations.len() != self.domains.len() {
            return fail(format!(
                "{} spurious correlations for {} domains",
                self.spurious.correlations.len(),
                self.domains.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.presence_rate) {
            return fail(format!("presence_rate {} not in [0, 1]", self.presence_rate));
        }
        if self.spurious.correlations.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return fail("spurious correlations must lie in [0, 1]".to_string());
        }
        if self.height < 8 || self.width < 8 {
            return fail(format!("images must be >= 8x8, got {}x{}", self.height, self.width));
        }
        if self.fluid_class == 0 || self.fluid_class > N_FLUID_CLASSES {
            return fail(format!("fluid_class {} not in 1..=3", self.fluid_class));
        }
        if self.n_sc == 0 {
            return fail("n_sc must be >= 1".to_string());
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return fail(format!(
                "blob count range {}..={} is empty or zero",
                self.min_blobs, self.max_blobs
            ));
        }
        if !(0.0 < self.min_radius_frac && self.min_radius_frac <= self.max_radius_frac
            && self.max_radius_frac < 0.5)
        {
            return fail(format!(
                "radius fractions {}..{} must satisfy 0 < min <= max < 0.5",
                self.min_radius_frac, self.max_radius_frac
            ));
        }
        if !(0.0 < self.dark_min && self.dark_min <= self.dark_max && self.dark_max < 1.0) {
            return fail(format!(
                "darkening range {}..{} must satisfy 0 < min <= max < 1",
                self.dark_min, self.dark_max
            ));
        }
        if !(0.0..1.0).contains(&self.edge_feather) {
            return fail(format!("edge_feather {} not in [0, 1)", self.edge_feather));
        }
        if self.slices_per_domain == 0 {
            return fail("slices_per_domain must be >= 1".to_string());
        }
        let mut names = self.domains.clone();
        names.sort();
        names.dedup();
        if names.len() != self.domains.len() {
            return fail("domain names must be unique".to_string());
        }
        Ok(())
    }
}

/// Separable box blur with the given radius, in place.
fn box_blur(field: &mut [f64], h: usize, w: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let r = radius as isize;
    let mut tmp = vec![0.0; field.len()];
    for row in 0..h as isize {
        for col in 0..w as isize {
            let mut acc = 0.0;
            let mut n = 0.0;
            for d in -r..=r {
                let c = col + d;
                if c >= 0 && c < w as isize {
                    acc += field[(row * w as isize + c) as usize];
                    n += 1.0;
                }
            }
            tmp[(row * w as isize + col) as usize] = acc / n;
        }
    }
    for col in 0..w as isize {
        for row in 0..h as isize {
            let mut acc = 0.0;
            let mut n = 0.0;
            for d in -r..=r {
                let rr = row + d;
                if rr >= 0 && rr < h as isize {
                    acc += tmp[(rr * w as isize + col) as usize];
                    n += 1.0;
                }
            }
            field[(row * w as isize + col) as usize] = acc / n;
        }
    }
}

/// Render one slice: returns the quantized image and its mask.
fn gen_sample(spec: &SynthSpec, domain_idx: usize, sample_idx: usize) -> (Vec<u8>, SegMask) {
    let (h, w) = (spec.height, spec.width);
    let mut rng = stream(
        spec.seed,
        &[STREAM_DATAGEN, domain_idx as u64, sample_idx as u64],
    );

    // Layered background: two superimposed row-wise sinusoids plus a slight
    // column tilt. Anatomy parameters are drawn per slice, from the same
    // distribution in every domain.
    let f1: f64 = rng.random_range(1.0..2.5);
    let p1: f64 = rng.random_range(0.0..1.0);
    let f2: f64 = rng.random_range(3.0..5.0);
    let p2: f64 = rng.random_range(0.0..1.0);
    let tilt: f64 = rng.random_range(-0.06..0.06);
    let tau = std::f64::consts::TAU;
    let mut img = vec![0.0f64; h * w];
    for row in 0..h {
        let r = row as f64 / h as f64;
        let band = 0.55 + 0.18 * (tau * (f1 * r + p1)).sin() + 0.08 * (tau * (f2 * r + p2)).sin();
        for col in 0..w {
            img[row * w + col] = band + tilt * (col as f64 / w as f64 - 0.5);
        }
    }

    // Fluid pockets: darkened rotated ellipses. The mask records the hard
    // ellipse (elliptical distance <= 1); the image darkening ramps smoothly
    // from full strength inside to zero outside over the feather band, with
    // half strength exactly on the mask boundary. Overlapping blobs compose
    // multiplicatively.
    let mut mask = vec![0u8; h * w];
    let present = rng.random_bool(spec.presence_rate);
    if present {
        let n_blobs = rng.random_range(spec.min_blobs..=spec.max_blobs);
        let side = h.min(w) as f64;
        let feather = spec.edge_feather;
        for _ in 0..n_blobs {
            let cy: f64 = rng.random_range(0.20..0.80) * h as f64;
            let cx: f64 = rng.random_range(0.15..0.85) * w as f64;
            let ry: f64 = side * rng.random_range(spec.min_radius_frac..=spec.max_radius_frac) * 0.8;
            let rx: f64 = side * rng.random_range(spec.min_radius_frac..=spec.max_radius_frac);
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let dark: f64 = rng.random_range(spec.dark_min..=spec.dark_max);
            let (sin_t, cos_t) = theta.sin_cos();
            for row in 0..h {
                for col in 0..w {
                    let dy = row as f64 + 0.5 - cy;
                    let dx = col as f64 + 0.5 - cx;
                    let u = (cos_t * dx + sin_t * dy) / rx;
                    let v = (-sin_t * dx + cos_t * dy) / ry;
                    let d = (u * u + v * v).sqrt();
                    let strength = if feather <= 0.0 {
                        if d <= 1.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let t = ((1.0 + feather - d) / (2.0 * feather)).clamp(0.0, 1.0);
                        t * t * (3.0 - 2.0 * t)
                    };
                    if strength > 0.0 {
                        img[row * w + col] *= 1.0 - (1.0 - dark) * strength;
                    }
                    if d <= 1.0 {
                        mask[row * w + col] = spec.fluid_class;
                    }
                }
            }
        }
    }
    // A blob can land entirely outside the frame only if the center margins
    // fail; with the margins above it always intersects, but derive the label
    // from the mask regardless so image and labels cannot disagree.
    let y = mask.iter().any(|&m| m != 0);

    // Spurious brightness cue, correlated with the label per domain.
    let corr = if spec.spurious.enabled {
        spec.spurious.correlations[domain_idx]
    } else {
        0.5
    };
    let cue_up = if rng.random_bool(corr) { y } else { !y };
    let cue = if cue_up {
        spec.spurious.cue_strength
    } else {
        -spec.spurious.cue_strength
    };

    // Domain acquisition style.
    let ns = &spec.noise[domain_idx];
    let mut speckle: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    box_blur(&mut speckle, h, w, ns.speckle_grain);
    let band_phase: f64 = rng.random_range(0.0..tau);
    for row in 0..h {
        let band = ns.band_amp * (tau * row as f64 / ns.band_period + band_phase).sin();
        for col in 0..w {
            let i = row * w + col;
            let mut v = img[i] * (1.0 + ns.speckle_amp * speckle[i]) + band;
            v = v.clamp(0.0, 1.0).powf(ns.gamma) + ns.brightness + cue;
            img[i] = v.clamp(0.0, 1.0);
        }
    }

    let quantized: Vec<u8> = img.iter().map(|&v| (v * 255.0).round() as u8).collect();
    let mask = SegMask::new(h, w, N_FLUID_CLASSES, mask).expect("generated mask is valid");
    (quantized, mask)
}

/// Generate the full dataset tree under `out_root`, one directory per domain.
/// Domains render in parallel; every sample has its own derived RNG stream,
/// so the output is a pure function of the spec.
pub fn generate_synthetic(spec: &SynthSpec, out_root: &Path) -> Result<(), DataError> {
    spec.validate()?;
    fs::create_dir_all(out_root).map_err(|source| DataError::Write {
        path: out_root.to_path_buf(),
        source,
    })?;

    spec.domains
        .par_iter()
        .enumerate()
        .try_for_each(|(domain_idx, domain)| {
            let dir = out_root.join(domain);
            for sub in ["images", "masks"] {
                fs::create_dir_all(dir.join(sub)).map_err(|source| DataError::Write {
                    path: dir.join(sub),
                    source,
                })?;
            }
            let mut lines = Vec::with_capacity(spec.slices_per_domain);
            for sample_idx in 0..spec.slices_per_domain {
                let id = format!("{domain}_{sample_idx:06}");
                let (image, mask) = gen_sample(spec, domain_idx, sample_idx);
                lines.push(write_sample(&dir, &id, &image, &mask, spec.n_sc)?);
            }
            write_manifest(&dir, &lines)
        })
}
