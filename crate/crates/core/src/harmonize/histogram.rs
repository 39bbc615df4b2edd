//! Tissue-masked per-channel CDFs and CDF-matching lookup tables.

use serde::{Deserialize, Serialize};

use super::mask::TissueMask;
use crate::error::{Error, Result};
use crate::image::{to_u8, CoreImage};

/// Per-channel cumulative histograms over tissue pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelCdf {
    /// `cdf[c][v]` is the fraction of tissue pixels with channel `c` <= `v`.
    pub cdf: [Vec<f64>; 3],
    pub pixel_count: u64,
}

impl ChannelCdf {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.cdf[c]
    }

    /// Largest single-bin probability mass over all channels.
    pub fn max_bin_mass(&self) -> f64 {
        self.cdf
            .iter()
            .flat_map(|ch| {
                std::iter::once(ch[0]).chain(ch.windows(2).map(|w| w[1] - w[0]))
            })
            .fold(0.0, f64::max)
    }

    /// Largest absolute CDF difference over all channels and bins.
    pub fn sup_distance(&self, other: &ChannelCdf) -> f64 {
        self.cdf
            .iter()
            .zip(&other.cdf)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        for ch in &self.cdf {
            if ch.len() != 256 {
                return Err(Error::InvalidParameter(format!("CDF has {} bins, expected 256", ch.len())));
            }
            if ch.windows(2).any(|w| w[1] < w[0]) || ch.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter("CDF is not monotone in [0, 1]".into()));
            }
        }
        if self.pixel_count == 0 {
            return Err(Error::InsufficientTissue("reference CDF has no pixels".into()));
        }
        Ok(())
    }
}

pub fn compute_channel_cdf(core: &CoreImage, mask: &TissueMask) -> Result<ChannelCdf> {
    if !mask.matches(core) {
        return Err(Error::DimensionMismatch("mask does not match core".into()));
    }
    let mut counts = [[0u64; 256]; 3];
    let mut n = 0u64;
    for (px, _) in core.raw().chunks_exact(3).zip(&mask.bits).filter(|(_, &m)| m) {
        for c in 0..3 {
            counts[c][px[c] as usize] += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientTissue("tissue mask is empty".into()));
    }
    let cdf = counts.map(|hist| {
        let mut acc = 0u64;
        hist.iter()
            .map(|&h| {
                acc += h;
                acc as f64 / n as f64
            })
            .collect()
    });
    Ok(ChannelCdf { cdf, pixel_count: n })
}

/// Per-channel LUT: `v -> min { t : target[t] >= source[v] }` for every value
/// that occurs in the source tissue.
///
/// Values absent from the source tissue only ever reach non-tissue pixels.
/// They are interpolated linearly between the neighbouring occupied entries,
/// with 0 -> 0 and 255 -> 255 as outer anchors, so background stays put and
/// matching an image to its own CDF is the identity.
pub fn histogram_lut(source: &ChannelCdf, target: &ChannelCdf) -> [[u8; 256]; 3] {
    std::array::from_fn(|c| {
        let (src, tgt) = (&source.cdf[c], &target.cdf[c]);
        let mut lut = [0u8; 256];
        let mut anchors: Vec<(usize, f64)> = Vec::with_capacity(258);
        let mut t = 0usize;
        for v in 0..256 {
            let occupied = if v == 0 { src[0] > 0.0 } else { src[v] > src[v - 1] };
            if !occupied {
                continue;
            }
            // source CDF is non-decreasing, so the search resumes where it stopped
            while t < 255 && tgt[t] < src[v] {
                t += 1;
            }
            lut[v] = t as u8;
            anchors.push((v, t as f64));
        }
        if anchors.first().is_none_or(|a| a.0 != 0) {
            anchors.insert(0, (0, 0.0));
        }
        if anchors.last().is_some_and(|a| a.0 != 255) {
            anchors.push((255, 255.0));
        }
        lut[255] = anchors.last().expect("anchored").1 as u8;
        for pair in anchors.windows(2) {
            let ((v0, t0), (v1, t1)) = (pair[0], pair[1]);
            for v in v0 + 1..v1 {
                lut[v] = to_u8(t0 + (t1 - t0) * (v - v0) as f64 / (v1 - v0) as f64);
            }
        }
        lut
    })
}

fn apply_lut(core: &CoreImage, lut: &[[u8; 256]; 3]) -> CoreImage {
    let mut out = core.clone();
    for px in out.pixels.as_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = lut[c][px[c] as usize];
        }
    }
    out
}

/// CDF-match the tissue distribution of `core` onto `target`. The LUT is
/// estimated on tissue and applied to every pixel.
pub fn match_histogram(core: &CoreImage, mask: &TissueMask, target: &ChannelCdf) -> Result<CoreImage> {
    target.validate()?;
    let source = compute_channel_cdf(core, mask)?;
    Ok(apply_lut(core, &histogram_lut(&source, target)))
}

/// Per-channel blend weights for unstained calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelWeights {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Default for ChannelWeights {
    fn default() -> Self {
        Self { r: 1.0, g: 1.0, b: 1.0 }
    }
}

impl ChannelWeights {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        let w = Self { r, g, b };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.r, self.g, self.b].iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidParameter(format!("channel weights {self:?} outside [0, 1]")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }
}

/// Blend each channel between the input and its histogram-matched version:
/// `round(w * matched + (1 - w) * input)`.
pub fn calibrate_unstained(
    core: &CoreImage,
    mask: &TissueMask,
    target: &ChannelCdf,
    weights: ChannelWeights,
) -> Result<CoreImage> {
    weights.validate()?;
    let matched = match_histogram(core, mask, target)?;
    let w = weights.as_array();
    let mut out = core.clone();
    for (dst, m) in out.pixels.as_mut().chunks_exact_mut(3).zip(matched.raw().chunks_exact(3)) {
        for c in 0..3 {
            dst[c] = to_u8(w[c] * f64::from(m[c]) + (1.0 - w[c]) * f64::from(dst[c]));
        }
    }
    Ok(out)
}
