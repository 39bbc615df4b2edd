//! Domain harmonization: tissue masking, Macenko stain normalization and
//! tissue-masked histogram matching.

mod histogram;
mod macenko;
mod mask;

pub use histogram::{
    calibrate_unstained, compute_channel_cdf, histogram_lut, match_histogram, ChannelCdf, ChannelWeights,
};
pub use macenko::{
    estimate_stain_profile, normalize_stains, od_table, MacenkoParams, OdRejection, StainProfile, MIN_OD_PIXELS,
};
pub use mask::{otsu_threshold, tissue_mask, MaskParams, MaskStrategy, TissueMask, DEFAULT_LUMINANCE_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::CoreImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HarmonizeParams {
    pub mask: MaskParams,
    pub macenko: MacenkoParams,
}

/// What an H&E reference contributes to harmonization, computed once per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeReference {
    pub profile: StainProfile,
    pub cdf: ChannelCdf,
}

impl HeReference {
    pub fn from_image(reference: &CoreImage, params: &HarmonizeParams) -> Result<Self> {
        let mask = tissue_mask(reference, params.mask);
        if mask.is_empty() {
            return Err(Error::InsufficientTissue(format!("reference `{}` has no tissue", reference.core_id)));
        }
        Ok(Self {
            profile: estimate_stain_profile(reference, &mask, params.macenko)?,
            cdf: compute_channel_cdf(reference, &mask)?,
        })
    }
}

/// Stain-normalize `core` to the reference profile, then CDF-match its tissue
/// onto the reference tissue distribution.
pub fn harmonize_he(core: &CoreImage, reference: &CoreImage, params: &HarmonizeParams) -> Result<CoreImage> {
    let reference = HeReference::from_image(reference, params)?;
    harmonize_he_with(core, &reference, params)
}

pub fn harmonize_he_with(core: &CoreImage, reference: &HeReference, params: &HarmonizeParams) -> Result<CoreImage> {
    let mask = tissue_mask(core, params.mask);
    if mask.is_empty() {
        return Err(Error::InsufficientTissue(format!("core `{}` has no tissue", core.core_id)));
    }
    let own = estimate_stain_profile(core, &mask, params.macenko)?;
    let normalized = normalize_stains(core, &own, &reference.profile)?;
    // tissue location is a property of the section, so the pre-normalization
    // mask gates the histogram estimate
    match_histogram(&normalized, &mask, &reference.cdf)
}
