use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonize::TissueMask;
use crate::image::CoreImage;
use crate::util::median;

/// Mean 8-bit intensities over tissue pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensitySummary {
    pub core_id: String,
    pub overall: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
    pub tissue_fraction: f64,
}

/// First minus second, per channel and overall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityDiff {
    pub overall: f64,
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub core_id: String,
    pub mean_diff: f64,
    pub median_diff: f64,
    pub n_reference: usize,
}

pub fn masked_intensity(core: &CoreImage, mask: &TissueMask) -> Result<IntensitySummary> {
    if !mask.matches(core) {
        return Err(Error::DimensionMismatch("mask does not match core".into()));
    }
    let mut sums = [0u64; 3];
    let mut n = 0u64;
    for (px, _) in core.raw().chunks_exact(3).zip(&mask.bits).filter(|(_, &m)| m) {
        for c in 0..3 {
            sums[c] += u64::from(px[c]);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientTissue(format!("core `{}` has an empty tissue mask", core.core_id)));
    }
    let [r, g, b] = sums.map(|s| s as f64 / n as f64);
    Ok(IntensitySummary {
        core_id: core.core_id.clone(),
        overall: (r + g + b) / 3.0,
        r,
        g,
        b,
        tissue_fraction: mask.tissue_fraction,
    })
}

pub fn intensity_difference(x: &IntensitySummary, y: &IntensitySummary) -> IntensityDiff {
    IntensityDiff {
        overall: x.overall - y.overall,
        r: x.r - y.r,
        g: x.g - y.g,
        b: x.b - y.b,
    }
}

/// Mean and median of `core.overall - ref.overall` across a reference set.
pub fn domain_shift_summary(core: &IntensitySummary, reference: &[IntensitySummary]) -> Result<DomainShift> {
    if reference.is_empty() {
        return Err(Error::InvalidParameter("domain-shift reference set is empty".into()));
    }
    let mut diffs: Vec<f64> = reference.iter().map(|r| core.overall - r.overall).collect();
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(DomainShift {
        core_id: core.core_id.clone(),
        mean_diff,
        median_diff: median(&mut diffs),
        n_reference: reference.len(),
    })
}
