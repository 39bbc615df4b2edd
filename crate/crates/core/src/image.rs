//! In-memory core rasters and the small pixel helpers shared by every stage.

use std::fmt;
use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec. 601 luma weights, shared by the tissue mask, registration and SSIM.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

/// Which acquisition or model output a core raster represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainState {
    Unstained,
    Stained,
    VirtualDestained,
    VirtualStained,
    VirtualRestained,
}

impl fmt::Display for StainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StainState::Unstained => "unstained",
            StainState::Stained => "stained",
            StainState::VirtualDestained => "virtual_destained",
            StainState::VirtualStained => "virtual_stained",
            StainState::VirtualRestained => "virtual_restained",
        };
        f.write_str(s)
    }
}

/// One biopsy core: 8-bit RGB pixels plus the resolution and provenance labels
/// that travel with it through the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreImage {
    pub pixels: RgbImage,
    pub mpp: f64,
    pub core_id: String,
    pub stain_state: StainState,
}

impl CoreImage {
    pub fn new(
        pixels: RgbImage,
        mpp: f64,
        core_id: impl Into<String>,
        stain_state: StainState,
    ) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::InvalidParameter("core image must be at least 1x1".into()));
        }
        if !(mpp.is_finite() && mpp > 0.0) {
            return Err(Error::InvalidParameter(format!("mpp must be > 0, got {mpp}")));
        }
        Ok(Self {
            pixels,
            mpp,
            core_id: core_id.into(),
            stain_state,
        })
    }

    /// Uniformly filled core, mostly useful for tests and degenerate canvases.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3], mpp: f64, core_id: &str) -> Result<Self> {
        Self::new(
            ImageBuffer::from_pixel(width, height, Rgb(rgb)),
            mpp,
            core_id,
            StainState::Stained,
        )
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.pixels.height(), self.pixels.width())
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.width() as usize * self.pixels.height() as usize
    }

    /// Interleaved RGB bytes, row-major.
    pub fn raw(&self) -> &[u8] {
        self.pixels.as_raw()
    }

    /// Interleaved RGB values scaled to [0, 1].
    pub fn normalized(&self) -> Vec<f64> {
        self.raw().iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    /// Rec. 601 luminance per pixel in 8-bit units (not rounded).
    pub fn luminance(&self) -> Vec<f64> {
        self.raw().chunks_exact(3).map(luma).collect()
    }

    /// Rec. 601 luminance per pixel scaled to [0, 1].
    pub fn luminance_unit(&self) -> Vec<f64> {
        self.raw()
            .chunks_exact(3)
            .map(|p| luma(p) / 255.0)
            .collect()
    }

    pub fn with_state(mut self, state: StainState) -> Self {
        self.stain_state = state;
        self
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_png(&self.pixels, path)
    }
}

pub(crate) fn luma(p: &[u8]) -> f64 {
    LUMA[0] * f64::from(p[0]) + LUMA[1] * f64::from(p[1]) + LUMA[2] * f64::from(p[2])
}

/// Round half to even and clamp into the 8-bit range.
pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}
