//! Dataset directories: manifest format, sample loading, label verification.

use super::pgm::{read_pgm, write_pgm};
use super::DataError;
use crate::labels::SegMask;
use std::fs;
use std::path::Path;

/// Fluid classes annotated in every mask (1 = IRF, 2 = SRF, 3 = PED).
pub const N_FLUID_CLASSES: u8 = 3;

pub(super) const MANIFEST_HEADER: &str = "id,image_path,mask_path,height,width,\
     mass_1,severity_1,presence_1,mass_2,severity_2,presence_2,mass_3,severity_3,presence_3";

/// One B-scan slice: 8-bit image plus its segmentation mask.
///
/// Task and privileged labels are always derived from the mask on demand, so
/// a loaded sample cannot disagree with itself.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Vec<u8>,
    pub mask: SegMask,
}

impl Sample {
    /// Image rescaled to `[0, 1]`.
    pub fn image_f64(&self) -> Vec<f64> {
        self.image.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// All slices from one vendor/domain, in manifest order.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    domain_id: String,
    height: usize,
    width: usize,
    samples: Vec<Sample>,
}

impl DomainDataset {
    pub fn new(
        domain_id: String,
        height: usize,
        width: usize,
        samples: Vec<Sample>,
    ) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if s.mask.height() != height || s.mask.width() != width {
                return Err(DataError::BadSample {
                    id: s.id.clone(),
                    reason: format!(
                        "mask is {}x{}, domain is {height}x{width}",
                        s.mask.height(),
                        s.mask.width()
                    ),
                });
            }
            if s.image.len() != height * width {
                return Err(DataError::BadSample {
                    id: s.id.clone(),
                    reason: format!("image has {} pixels, expected {}", s.image.len(), height * width),
                });
            }
            if !seen.insert(s.id.clone()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            domain_id,
            height,
            width,
            samples,
        })
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Render one manifest row; label columns are derived from the mask.
pub(super) fn manifest_line(id: &str, mask: &SegMask, n_sc: u8) -> String {
    let mut line = format!(
        "{id},images/{id}.pgm,masks/{id}.pgm,{},{}",
        mask.height(),
        mask.width()
    );
    for class in 1..=N_FLUID_CLASSES {
        let mass = mask.fluid_mass(class).expect("class in range");
        let severity = mask.severity(class, n_sc).expect("class in range");
        let presence = mask.presence_label(class).expect("class in range");
        line.push_str(&format!(",{mass},{severity},{presence}"));
    }
    line
}

/// Write one sample's image, mask, and return its manifest row.
pub(super) fn write_sample(
    dir: &Path,
    id: &str,
    image: &[u8],
    mask: &SegMask,
    n_sc: u8,
) -> Result<String, DataError> {
    write_pgm(
        &dir.join("images").join(format!("{id}.pgm")),
        mask.width(),
        mask.height(),
        image,
    )?;
    write_pgm(
        &dir.join("masks").join(format!("{id}.pgm")),
        mask.width(),
        mask.height(),
        mask.labels(),
    )?;
    Ok(manifest_line(id, mask, n_sc))
}

pub(super) fn write_manifest(dir: &Path, lines: &[String]) -> Result<(), DataError> {
    let path = dir.join("manifest.csv");
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|source| DataError::Write { path, source })
}

/// Load one domain directory, verifying every manifest label against the
/// sample's mask (severity with scale `n_sc`). The domain id is the
/// directory name; samples come back in manifest order.
pub fn load_dataset(dir: &Path, n_sc: u8) -> Result<DomainDataset, DataError> {
    let manifest_path = dir.join("manifest.csv");
    if !manifest_path.exists() {
        return Err(DataError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|source| DataError::Read {
        path: manifest_path.clone(),
        source,
    })?;
    let parse_err = |line: usize, reason: &str| DataError::ManifestParse {
        path: manifest_path.clone(),
        line,
        reason: reason.to_string(),
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(1, &format!("unexpected header {header:?}")));
        }
        None => return Err(parse_err(1, "empty manifest")),
    }

    let mut samples = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(parse_err(
                lineno,
                &format!("expected 14 fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].to_string();
        let height: usize = fields[3]
            .parse()
            .map_err(|_| parse_err(lineno, "bad height"))?;
        let width: usize = fields[4]
            .parse()
            .map_err(|_| parse_err(lineno, "bad width"))?;

        let (img_w, img_h, image) = read_pgm(&dir.join(fields[1]))?;
        let (mask_w, mask_h, mask_data) = read_pgm(&dir.join(fields[2]))?;
        if (img_h, img_w) != (height, width) || (mask_h, mask_w) != (height, width) {
            return Err(DataError::BadSample {
                id,
                reason: format!(
                    "manifest says {height}x{width}, image is {img_h}x{img_w}, mask is {mask_h}x{mask_w}"
                ),
            });
        }
        let mask = SegMask::new(height, width, N_FLUID_CLASSES, mask_data).map_err(|e| {
            DataError::BadSample {
                id: id.clone(),
                reason: e.to_string(),
            }
        })?;

        // Re-derive every label column from the mask.
        for class in 1..=N_FLUID_CLASSES {
            let base = 5 + 3 * (class as usize - 1);
            let checks: [(&str, u64); 3] = [
                ("mass", mask.fluid_mass(class)?),
                ("severity", mask.severity(class, n_sc)? as u64),
                ("presence", mask.presence_label(class)? as u64),
            ];
            for (offset, (name, recomputed)) in checks.into_iter().enumerate() {
                let field = format!("{name}_{class}");
                let manifest: u64 = fields[base + offset]
                    .parse()
                    .map_err(|_| parse_err(lineno, &format!("bad {field}")))?;
                if manifest != recomputed {
                    return Err(DataError::LabelMismatch {
                        id,
                        field,
                        manifest,
                        recomputed,
                    });
                }
            }
        }

        if let Some(d) = dims {
            if d != (height, width) {
                return Err(DataError::BadSample {
                    id,
                    reason: format!("dimensions {height}x{width} differ from domain {d:?}"),
                });
            }
        } else {
            dims = Some((height, width));
        }
        samples.push(Sample { id, image, mask });
    }

    let (height, width) = dims.ok_or_else(|| parse_err(2, "manifest has no samples"))?;
    let domain_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string());
    DomainDataset::new(domain_id, height, width, samples)
}

/// Load every domain under `root` (subdirectories with a manifest), sorted by
/// name for determinism.
pub fn load_domains(root: &Path, n_sc: u8) -> Result<Vec<DomainDataset>, DataError> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|source| DataError::Read {
            path: root.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("manifest.csv").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DataError::MissingManifest(root.to_path_buf()));
    }
    dirs.iter().map(|d| load_dataset(d, n_sc)).collect()
}
