//! Dataset layer: on-disk layout, PGM image codec, synthetic multi-domain
//! generator, loaders, and deterministic batching.
//!
//! A dataset root holds one directory per domain:
//!
//! ```text
//! root/
//!   cirrus/
//!     manifest.csv          id, image_path, mask_path, height, width,
//!                           mass_1, severity_1, presence_1, … (classes 1..=3)
//!     images/<id>.pgm       binary P5, 8-bit grayscale
//!     masks/<id>.pgm        binary P5, pixel value = class index
//!   spectralis/…
//!   topcon/…
//! ```
//!
//! Images are stored quantized to 8 bits and rescaled to `[0, 1]` when
//! batched. Masks are the ground truth for all labels; the manifest's label
//! columns are redundant and re-verified against the masks at load time.

mod batch;
mod dataset;
mod pgm;
mod synth;

pub use batch::make_batches;
pub use dataset::{load_dataset, load_domains, DomainDataset, Sample, N_FLUID_CLASSES};
pub use pgm::{read_pgm, write_pgm};
pub use synth::{generate_synthetic, DomainNoise, SpuriousSpec, SynthSpec};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a valid PGM file: {reason}")]
    PgmFormat { path: PathBuf, reason: String },
    #[error("missing manifest: {0} has no manifest.csv")]
    MissingManifest(PathBuf),
    #[error("{path} line {line}: malformed manifest row: {reason}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(
        "sample {id}: manifest {field} is {manifest} but the mask yields {recomputed}; \
         mask and manifest are inconsistent"
    )]
    LabelMismatch {
        id: String,
        field: String,
        manifest: u64,
        recomputed: u64,
    },
    #[error("sample {id}: {reason}")]
    BadSample { id: String, reason: String },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
}
