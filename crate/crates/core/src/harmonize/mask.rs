use serde::{Deserialize, Serialize};

use crate::image::{luma, CoreImage};

pub const DEFAULT_LUMINANCE_THRESHOLD: f64 = 0.88;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    #[default]
    LuminanceThreshold,
    Otsu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskParams {
    pub strategy: MaskStrategy,
    /// Normalized luminance cut-off; ignored by Otsu.
    pub threshold: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::LuminanceThreshold,
            threshold: DEFAULT_LUMINANCE_THRESHOLD,
        }
    }
}

/// Tissue/background raster. `true` marks tissue.
#[derive(Clone, Debug, PartialEq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
    pub tissue_fraction: f64,
    pub strategy: MaskStrategy,
    /// Normalized luminance threshold actually applied.
    pub threshold: f64,
}

impl TissueMask {
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>, strategy: MaskStrategy, threshold: f64) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize, "mask size");
        let count = bits.iter().filter(|&&b| b).count();
        let tissue_fraction = count as f64 / bits.len() as f64;
        Self {
            width,
            height,
            bits,
            tissue_fraction,
            strategy,
            threshold,
        }
    }

    /// Every pixel marked as tissue.
    pub fn full(width: u32, height: u32) -> Self {
        Self::from_bits(width, height, vec![true; width as usize * height as usize], MaskStrategy::LuminanceThreshold, 1.0)
    }

    pub fn tissue_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.tissue_count() == 0
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn matches(&self, core: &CoreImage) -> bool {
        self.width == core.width() && self.height == core.height()
    }
}

pub fn tissue_mask(core: &CoreImage, params: MaskParams) -> TissueMask {
    let lum: Vec<f64> = core.raw().chunks_exact(3).map(luma).collect();
    let threshold = match params.strategy {
        MaskStrategy::LuminanceThreshold => params.threshold,
        MaskStrategy::Otsu => otsu_threshold(&lum).unwrap_or(params.threshold),
    };
    let bits = lum.iter().map(|&l| l / 255.0 < threshold).collect();
    TissueMask::from_bits(core.width(), core.height(), bits, params.strategy, threshold)
}

/// Otsu's split on the rounded luminance histogram, returned as a normalized
/// threshold sitting halfway between the last background-side bin and the
/// next. `None` when every pixel falls in a single bin.
pub fn otsu_threshold(lum: &[f64]) -> Option<f64> {
    let mut hist = [0u64; 256];
    for &l in lum {
        hist[l.round_ties_even().clamp(0.0, 255.0) as usize] += 1;
    }
    let total = lum.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();

    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for (k, &c) in hist.iter().enumerate().take(255) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| (k as f64 + 0.5) / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{BLACK, WHITE};
    use image::{ImageBuffer, Rgb};

    #[test]
    fn white_and_black_extremes() {
        let white = CoreImage::filled(8, 8, WHITE, 0.5, "w").unwrap();
        let black = CoreImage::filled(8, 8, BLACK, 0.5, "b").unwrap();
        assert_eq!(tissue_mask(&white, MaskParams::default()).tissue_fraction, 0.0);
        assert_eq!(tissue_mask(&black, MaskParams::default()).tissue_fraction, 1.0);
    }

    #[test]
    fn half_gray_half_white() {
        let img = ImageBuffer::from_fn(10, 6, |x, _| if x < 5 { Rgb([100u8; 3]) } else { Rgb(WHITE) });
        let core = CoreImage::new(img, 0.5, "h", crate::image::StainState::Stained).unwrap();
        // direct scan: 100/255 = 0.392 < 0.88 and 255/255 >= 0.88
        let expected = core
            .raw()
            .chunks_exact(3)
            .filter(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0 < 0.88)
            .count() as f64
            / 60.0;
        let m = tissue_mask(&core, MaskParams::default());
        assert_eq!(m.tissue_fraction, expected);
        assert_eq!(m.tissue_fraction, 0.5);
        assert_eq!(m.tissue_fraction, m.tissue_count() as f64 / 60.0);
    }

    #[test]
    fn otsu_splits_bimodal() {
        let img = ImageBuffer::from_fn(20, 20, |x, _| if x < 8 { Rgb([60u8; 3]) } else { Rgb([230u8; 3]) });
        let core = CoreImage::new(img, 0.5, "o", crate::image::StainState::Stained).unwrap();
        let m = tissue_mask(
            &core,
            MaskParams {
                strategy: MaskStrategy::Otsu,
                threshold: 0.88,
            },
        );
        assert_eq!(m.tissue_fraction, 0.4);
        assert!(m.threshold > 60.0 / 255.0 && m.threshold < 230.0 / 255.0);
    }

    #[test]
    fn otsu_on_flat_image_falls_back() {
        let core = CoreImage::filled(4, 4, WHITE, 0.5, "w").unwrap();
        let m = tissue_mask(&core, MaskParams { strategy: MaskStrategy::Otsu, threshold: 0.88 });
        assert_eq!(m.tissue_fraction, 0.0);
    }
}
