//! Privileged-label extraction from segmentation masks.
//!
//! Masks assign each pixel a class in `{0, 1, …, L}` where 0 is background
//! and 1..=L index fluid types. From a mask we derive, per fluid class:
//!
//! * **mass** — the raw count of pixels labeled with that class;
//! * **severity** — the fluid proportion mapped onto a 0..=N_sc scale via
//!   `ceil(5 · N_sc · mass / (H·W))`, clamped to N_sc. The clamp makes the
//!   severity head a fixed (N_sc+1)-class classifier even for masks with more
//!   than 20% fluid, where the raw formula exceeds the scale.
//! * **presence** — the binary main-task target, 1 iff mass > 0.
//!
//! Severity is computed in integer arithmetic, so nearest-neighbour upscaling
//! of a mask by any integer factor k leaves it exactly unchanged (mass and
//! H·W both scale by k²).

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("fluid class {class} out of range 1..={max}")]
    FluidClassOutOfRange { class: u8, max: u8 },
    #[error("severity scale N_sc must be >= 1")]
    ZeroScale,
    #[error("mask dimensions {height}x{width} must be nonzero")]
    EmptyMask { height: usize, width: usize },
    #[error("mask data length {len} does not match {height}x{width}")]
    DataLength {
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("pixel {index} has label {label}, above the class count {max}")]
    PixelOutOfRange { index: usize, label: u8, max: u8 },
}

/// A per-pixel class map: 0 = background, 1..=n_fluid_classes = fluid types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    n_fluid_classes: u8,
    labels: Vec<u8>,
}

impl SegMask {
    pub fn new(
        height: usize,
        width: usize,
        n_fluid_classes: u8,
        labels: Vec<u8>,
    ) -> Result<Self, LabelError> {
        if height == 0 || width == 0 {
            return Err(LabelError::EmptyMask { height, width });
        }
        if labels.len() != height * width {
            return Err(LabelError::DataLength {
                height,
                width,
                len: labels.len(),
            });
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l > n_fluid_classes)
        {
            return Err(LabelError::PixelOutOfRange {
                index,
                label,
                max: n_fluid_classes,
            });
        }
        Ok(Self {
            height,
            width,
            n_fluid_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_fluid_classes(&self) -> u8 {
        self.n_fluid_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn check_class(&self, fluid_class: u8) -> Result<(), LabelError> {
        if fluid_class == 0 || fluid_class > self.n_fluid_classes {
            return Err(LabelError::FluidClassOutOfRange {
                class: fluid_class,
                max: self.n_fluid_classes,
            });
        }
        Ok(())
    }

    /// Number of pixels labeled `fluid_class`.
    pub fn fluid_mass(&self, fluid_class: u8) -> Result<u64, LabelError> {
        self.check_class(fluid_class)?;
        Ok(self.labels.iter().filter(|&&l| l == fluid_class).count() as u64)
    }

    /// `ceil(5 · n_sc · mass / (H·W))` clamped to `n_sc`; 0 iff mass is 0.
    pub fn severity(&self, fluid_class: u8, n_sc: u8) -> Result<u8, LabelError> {
        if n_sc == 0 {
            return Err(LabelError::ZeroScale);
        }
        let mass = self.fluid_mass(fluid_class)? as u128;
        let hw = (self.height * self.width) as u128;
        let raw = (5 * n_sc as u128 * mass).div_ceil(hw);
        Ok(raw.min(n_sc as u128) as u8)
    }

    /// Binary presence target: 1 iff any pixel carries `fluid_class`.
    pub fn presence_label(&self, fluid_class: u8) -> Result<u8, LabelError> {
        Ok(u8::from(self.fluid_mass(fluid_class)? > 0))
    }

    /// Nearest-neighbour upscale by an integer factor in both dimensions.
    pub fn upscale(&self, k: usize) -> SegMask {
        assert!(k >= 1, "upscale factor must be >= 1");
        let (h, w) = (self.height * k, self.width * k);
        let mut labels = vec![0u8; h * w];
        for row in 0..h {
            for col in 0..w {
                labels[row * w + col] = self.labels[(row / k) * self.width + col / k];
            }
        }
        SegMask {
            height: h,
            width: w,
            n_fluid_classes: self.n_fluid_classes,
            labels,
        }
    }
}

/// Privileged target attached to a training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivilegedLabel {
    /// Raw pixel count of the fluid class.
    Mass(u64),
    /// Discretized severity in 0..=N_sc.
    Severity(u8),
}

/// Which privileged head / label a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivKind {
    Mass,
    Severity,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mask(h: usize, w: usize, labels: Vec<u8>) -> SegMask {
        SegMask::new(h, w, 3, labels).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, max_side: usize) -> SegMask {
        let h = rng.random_range(1..=max_side);
        let w = rng.random_range(1..=max_side);
        let labels = (0..h * w).map(|_| rng.random_range(0..=3u8)).collect();
        mask(h, w, labels)
    }

    /// Independent severity route: float division + f64 ceiling + clamp.
    fn severity_brute_force(m: &SegMask, class: u8, n_sc: u8) -> u8 {
        let count = m.labels().iter().filter(|&&l| l == class).count() as f64;
        let hw = (m.height() * m.width()) as f64;
        let raw = (5.0 * n_sc as f64 * count / hw).ceil();
        raw.min(n_sc as f64) as u8
    }

    #[test]
    fn mass_of_empty_and_full_masks() {
        let zero = mask(224, 224, vec![0; 224 * 224]);
        assert_eq!(zero.fluid_mass(1).unwrap(), 0);
        let full = mask(224, 224, vec![2; 224 * 224]);
        assert_eq!(full.fluid_mass(2).unwrap(), 50_176);
        assert_eq!(full.fluid_mass(1).unwrap(), 0);
    }

    #[test]
    fn mass_matches_brute_force_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = random_mask(&mut rng, 64);
            for class in 1..=3u8 {
                let mut count = 0u64;
                for row in 0..m.height() {
                    for col in 0..m.width() {
                        if m.labels()[row * m.width() + col] == class {
                            count += 1;
                        }
                    }
                }
                assert_eq!(m.fluid_mass(class).unwrap(), count);
            }
        }
    }

    #[test]
    fn severity_closed_forms() {
        let zero = mask(10, 10, vec![0; 100]);
        assert_eq!(zero.severity(1, 5).unwrap(), 0);

        // 4 of 100 pixels: ceil(25 * 0.04) = ceil(1.0) = 1
        let mut labels = vec![0u8; 100];
        labels[..4].fill(1);
        assert_eq!(mask(10, 10, labels).severity(1, 5).unwrap(), 1);

        // full mask: raw ceil(25) = 25, clamped to 5
        let full = mask(10, 10, vec![1; 100]);
        assert_eq!(full.severity(1, 5).unwrap(), 5);

        // 2008 of 224*224: proportion 0.04001..., ceil(1.0002...) = 2
        let mut labels = vec![0u8; 224 * 224];
        labels[..2008].fill(3);
        assert_eq!(mask(224, 224, labels).severity(3, 5).unwrap(), 2);
    }

    #[test]
    fn severity_zero_iff_mass_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let m = random_mask(&mut rng, 32);
            let sev = m.severity(1, 5).unwrap();
            let mass = m.fluid_mass(1).unwrap();
            assert_eq!(sev == 0, mass == 0);
        }
    }

    #[test]
    fn presence_closed_forms() {
        let zero = mask(8, 8, vec![0; 64]);
        assert_eq!(zero.presence_label(1).unwrap(), 0);
        let mut labels = vec![0u8; 64];
        labels[17] = 1;
        assert_eq!(mask(8, 8, labels).presence_label(1).unwrap(), 1);
    }

    #[test]
    fn presence_agrees_with_mass_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let m = random_mask(&mut rng, 24);
            for class in 1..=3u8 {
                assert_eq!(
                    m.presence_label(class).unwrap() == 1,
                    m.fluid_mass(class).unwrap() > 0
                );
            }
        }
    }

    #[test]
    fn class_zero_and_out_of_range_rejected() {
        let m = mask(4, 4, vec![0; 16]);
        assert_eq!(
            m.fluid_mass(0),
            Err(LabelError::FluidClassOutOfRange { class: 0, max: 3 })
        );
        assert_eq!(
            m.severity(4, 5),
            Err(LabelError::FluidClassOutOfRange { class: 4, max: 3 })
        );
        assert_eq!(m.severity(1, 0), Err(LabelError::ZeroScale));
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(
            SegMask::new(0, 5, 3, vec![]),
            Err(LabelError::EmptyMask { .. })
        ));
        assert!(matches!(
            SegMask::new(2, 2, 3, vec![0; 3]),
            Err(LabelError::DataLength { len: 3, .. })
        ));
        assert!(matches!(
            SegMask::new(2, 2, 3, vec![0, 0, 4, 0]),
            Err(LabelError::PixelOutOfRange {
                index: 2,
                label: 4,
                ..
            })
        ));
    }

    proptest! {
        #[test]
        fn severity_in_range(
            h in 1usize..32,
            w in 1usize..32,
            n_sc in 1u8..8,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels = (0..h * w).map(|_| rng.random_range(0..=3u8)).collect();
            let m = mask(h, w, labels);
            let sev = m.severity(1, n_sc).unwrap();
            prop_assert!(sev <= n_sc);
        }

        #[test]
        fn monotone_under_added_pixels(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng, 24);
            // Relabel one non-class-1 pixel to class 1 (if any exist).
            if let Some(pos) = m.labels().iter().position(|&l| l != 1) {
                let mut labels = m.labels().to_vec();
                labels[pos] = 1;
                let grown = mask(m.height(), m.width(), labels);
                prop_assert!(grown.fluid_mass(1).unwrap() >= m.fluid_mass(1).unwrap());
                prop_assert!(grown.severity(1, 5).unwrap() >= m.severity(1, 5).unwrap());
                prop_assert!(grown.presence_label(1).unwrap() >= m.presence_label(1).unwrap());
            }
        }

        #[test]
        fn severity_matches_brute_force(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng, 64);
            for n_sc in [1u8, 5, 7] {
                prop_assert_eq!(
                    m.severity(1, n_sc).unwrap(),
                    severity_brute_force(&m, 1, n_sc)
                );
            }
        }

        #[test]
        fn severity_invariant_under_integer_upscale(seed in 0u64..300, k in 2usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng, 20);
            let up = m.upscale(k);
            prop_assert_eq!(up.height(), m.height() * k);
            prop_assert_eq!(up.fluid_mass(1).unwrap(), m.fluid_mass(1).unwrap() * (k * k) as u64);
            prop_assert_eq!(up.severity(1, 5).unwrap(), m.severity(1, 5).unwrap());
        }
    }
}
