//! Core extraction from large rasters and resampling to the working resolution.

mod raster;
mod roi;

pub use raster::{load_core_image, load_rgb, open_rows, MemoryRows, RasterSource, RowSource};
pub use roi::{parse_roi, PixelBox, Point, RoiPolygon};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::image::{to_u8, CoreImage, StainState, WHITE};

pub const DEFAULT_STRIP_HEIGHT: u32 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    /// Colour written outside the polygon.
    pub fill: [u8; 3],
    /// Maximum number of source rows held in memory at once.
    pub strip_height: u32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            fill: WHITE,
            strip_height: DEFAULT_STRIP_HEIGHT,
        }
    }
}

/// Crop `roi` out of a raster file, streaming the source in horizontal strips.
pub fn extract_core(source: &RasterSource, roi: &RoiPolygon, opts: ExtractOptions) -> Result<CoreImage> {
    let mpp = source
        .mpp
        .ok_or_else(|| Error::MissingMpp(source.path.display().to_string()))?;
    let mut rows = source.rows()?;
    let pixels = extract_rows(rows.as_mut(), roi, opts)?;
    CoreImage::new(pixels, mpp, roi.label.clone(), source.stain_state)
}

/// Crop `roi` out of any row source. Pixels whose centre lies outside the
/// polygon (even-odd rule) take `opts.fill`.
///
/// Rows are pulled `opts.strip_height` at a time; the mask is evaluated per
/// row, so the output does not depend on the strip height.
pub fn extract_rows(rows: &mut dyn RowSource, roi: &RoiPolygon, opts: ExtractOptions) -> Result<RgbImage> {
    if opts.strip_height == 0 {
        return Err(Error::InvalidParameter("strip height must be >= 1".into()));
    }
    let (src_w, src_h) = (rows.width(), rows.height());
    let bounds = roi
        .pixel_bounds(src_w, src_h)
        .ok_or_else(|| Error::EmptyRoi(roi.label.clone()))?;
    let (out_w, out_h) = (bounds.width(), bounds.height());
    let mut out = RgbImage::new(out_w, out_h);

    rows.skip_rows(bounds.y0)?;
    let src_stride = src_w as usize * 3;
    let out_stride = out_w as usize * 3;
    let mut strip = Vec::with_capacity(src_stride * opts.strip_height.min(out_h) as usize);
    let mut inside = vec![false; out_w as usize];
    let mut scratch = Vec::new();

    let mut y = bounds.y0;
    while y < bounds.y1 {
        let n = opts.strip_height.min(bounds.y1 - y);
        strip.clear();
        for _ in 0..n {
            rows.next_row(&mut strip)?;
        }
        for r in 0..n {
            let sy = y + r;
            roi.scanline(sy, bounds.x0, &mut inside, &mut scratch);
            let src_row = &strip[r as usize * src_stride..][..src_stride];
            let oy = (sy - bounds.y0) as usize;
            let dst_row = &mut out.as_mut()[oy * out_stride..][..out_stride];
            for (i, &hit) in inside.iter().enumerate() {
                let dst = &mut dst_row[i * 3..i * 3 + 3];
                if hit {
                    let sx = (bounds.x0 as usize + i) * 3;
                    dst.copy_from_slice(&src_row[sx..sx + 3]);
                } else {
                    dst.copy_from_slice(&opts.fill);
                }
            }
        }
        y += n;
    }
    Ok(out)
}

/// Area-averaging downscale to `target_mpp`.
///
/// Output dimensions are `round(H * s) x round(W * s)` with `s = mpp /
/// target_mpp`, rounded half to even and at least 1.
pub fn downsample_to_mpp(core: &CoreImage, target_mpp: f64) -> Result<CoreImage> {
    if !(target_mpp.is_finite() && target_mpp > 0.0) {
        return Err(Error::InvalidParameter(format!("target mpp {target_mpp}")));
    }
    if target_mpp < core.mpp {
        return Err(Error::UpsampleUnsupported {
            source_mpp: core.mpp,
            target: target_mpp,
        });
    }
    let s = core.mpp / target_mpp;
    let out_w = scaled_dim(core.width(), s);
    let out_h = scaled_dim(core.height(), s);
    let pixels = box_resize(&core.pixels, out_w, out_h);
    Ok(CoreImage {
        pixels,
        mpp: target_mpp,
        core_id: core.core_id.clone(),
        stain_state: core.stain_state,
    })
}

fn scaled_dim(n: u32, s: f64) -> u32 {
    ((f64::from(n) * s).round_ties_even() as u32).max(1)
}

/// Overlap weights of each output cell with the source cells along one axis.
fn axis_weights(src: u32, dst: u32) -> Vec<Vec<(usize, f64)>> {
    let ratio = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|i| {
            let lo = f64::from(i) * ratio;
            let hi = if i + 1 == dst { f64::from(src) } else { f64::from(i + 1) * ratio };
            let first = lo.floor() as u32;
            let last = (hi.ceil() as u32).min(src);
            let mut w: Vec<(usize, f64)> = (first..last)
                .filter_map(|j| {
                    let ov = hi.min(f64::from(j + 1)) - lo.max(f64::from(j));
                    (ov > 0.0).then_some((j as usize, ov))
                })
                .collect();
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            w.iter_mut().for_each(|(_, v)| *v /= total);
            w
        })
        .collect()
}

/// Separable area-average resize. Exact identity when dimensions are unchanged.
pub fn box_resize(src: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    let (w, h) = src.dimensions();
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);
    let raw = src.as_raw();

    // horizontal pass into f64 rows
    let mut tmp = vec![0.0f64; h as usize * out_w as usize * 3];
    for y in 0..h as usize {
        let row = &raw[y * w as usize * 3..][..w as usize * 3];
        for (ox, taps) in wx.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for &(j, wt) in taps {
                for c in 0..3 {
                    acc[c] += wt * f64::from(row[j * 3 + c]);
                }
            }
            tmp[(y * out_w as usize + ox) * 3..][..3].copy_from_slice(&acc);
        }
    }

    let mut out = RgbImage::new(out_w, out_h);
    let out_raw: &mut [u8] = out.as_mut();
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..out_w as usize {
            let mut acc = [0.0f64; 3];
            for &(j, wt) in taps {
                let t = &tmp[(j * out_w as usize + ox) * 3..][..3];
                for c in 0..3 {
                    acc[c] += wt * t[c];
                }
            }
            let dst = &mut out_raw[(oy * out_w as usize + ox) * 3..][..3];
            for c in 0..3 {
                dst[c] = to_u8(acc[c]);
            }
        }
    }
    out
}

/// Convenience for sources held in memory.
pub fn extract_core_from_image(
    img: &RgbImage,
    roi: &RoiPolygon,
    mpp: f64,
    stain_state: StainState,
    opts: ExtractOptions,
) -> Result<CoreImage> {
    let pixels = extract_rows(&mut MemoryRows::new(img), roi, opts)?;
    CoreImage::new(pixels, mpp, roi.label.clone(), stain_state)
}
