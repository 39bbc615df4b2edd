//! Pixel similarity metrics, masked intensity analysis, aggregation and
//! group statistics.

mod aggregate;
mod intensity;
mod metrics;
pub mod special;
mod stats;

pub use aggregate::{aggregate_intensity, aggregate_metrics, mean_sd, AggregateRow, MeanSd};
pub use intensity::{
    domain_shift_summary, intensity_difference, masked_intensity, DomainShift, IntensityDiff, IntensitySummary,
};
pub use metrics::{gaussian_kernel, mse, mse_values, pcc, pearson, psnr, psnr_from_mse, ssim, ssim_gray, SsimParams};
pub use stats::{anova_oneway, fisher_lsd, LsdPair, SampleGroup, StatTestResult};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{CoreImage, WHITE};
use crate::registration::{ecc_align, ecc_value, warp, EccParams, GrayImage, RigidTransform};
use crate::util::float_or_inf;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    /// Alignment was requested for this pair.
    pub attempted: bool,
    pub converged: bool,
    pub theta_deg: f64,
    pub tx: f64,
    pub ty: f64,
    /// Correlation between the frames the metrics were computed on.
    pub ecc: f64,
}

impl AlignmentSummary {
    /// Alignment was requested but fell back to the identity.
    pub fn flagged(&self) -> bool {
        self.attempted && !self.converged
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub core_id: String,
    pub comparison: String,
    pub pcc: f64,
    pub ssim: f64,
    /// dB; `+inf` for identical images.
    #[serde(with = "float_or_inf")]
    pub psnr: f64,
    pub mse: f64,
    pub alignment: AlignmentSummary,
}

/// Pad with `fill` on the right and bottom to `width` x `height`.
pub fn pad_to(core: &CoreImage, width: u32, height: u32, fill: [u8; 3]) -> CoreImage {
    if core.dims() == (height, width) {
        return core.clone();
    }
    let (w0, h0) = (core.width(), core.height());
    let img = ImageBuffer::from_fn(width, height, |x, y| {
        if x < w0 && y < h0 {
            *core.pixels.get_pixel(x, y)
        } else {
            Rgb(fill)
        }
    });
    CoreImage {
        pixels: img,
        ..core.clone()
    }
}

fn frame_correlation(a: &CoreImage, b: &CoreImage) -> f64 {
    ecc_value(&GrayImage::from_core(a), &GrayImage::from_core(b)).unwrap_or(0.0)
}

/// Compare `b` against the reference `a`. Both are padded with white to a
/// common frame; with `align` set, `b` is rigidly registered onto `a` first.
/// A failed alignment leaves `b` untouched and is flagged in the record.
pub fn evaluate_pair(
    a: &CoreImage,
    b: &CoreImage,
    align: Option<EccParams>,
    comparison: &str,
    ssim_params: SsimParams,
) -> Result<MetricRecord> {
    let (w, h) = (a.width().max(b.width()), a.height().max(b.height()));
    let a = pad_to(a, w, h, WHITE);
    let mut b = pad_to(b, w, h, WHITE);

    let mut t = RigidTransform::identity();
    if let Some(params) = align {
        t = ecc_align(&b, &a, params)?;
        if t.converged {
            b = warp(&b, &t, WHITE);
        } else {
            log::warn!(
                "{} ({comparison}): alignment did not converge; metrics computed unaligned",
                a.core_id
            );
        }
    }
    let alignment = AlignmentSummary {
        attempted: align.is_some(),
        converged: align.is_some() && t.converged,
        theta_deg: t.theta_degrees(),
        tx: t.tx,
        ty: t.ty,
        ecc: if t.converged && align.is_some() {
            t.final_ecc
        } else {
            frame_correlation(&a, &b)
        },
    };
    let mse = mse(&a, &b)?;
    Ok(MetricRecord {
        core_id: a.core_id.clone(),
        comparison: comparison.to_owned(),
        pcc: pcc(&a, &b)?,
        ssim: ssim(&a, &b, ssim_params)?,
        psnr: psnr_from_mse(mse),
        mse,
        alignment,
    })
}
