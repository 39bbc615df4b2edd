//! Non-overlapping patch grids, zero-padded patch extraction and
//! reconstruction from grid coordinates.
//!
//! Two fills are in play and they differ on purpose: padding inside a
//! boundary patch is black (zero-padding), while canvas regions with no patch
//! are reconstructed as slide background (white by default).

use std::collections::HashSet;

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonize::TissueMask;
use crate::image::{CoreImage, StainState, BLACK};

pub const DEFAULT_PATCH_SIZE: u32 = 1024;
pub const DEFAULT_TISSUE_MIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: u32,
    pub col: u32,
    pub pad_bottom: u32,
    pub pad_right: u32,
    /// Tissue fraction over the un-padded part of the cell.
    pub tissue_fraction: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub core_id: String,
    /// (height, width)
    pub core_dims: (u32, u32),
    pub mpp: f64,
    pub patch_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub tissue_min: f64,
    /// Row-major.
    pub cells: Vec<GridCell>,
}

impl PatchGrid {
    pub fn cell(&self, row: u32, col: u32) -> Option<&GridCell> {
        (row < self.rows && col < self.cols).then(|| &self.cells[(row * self.cols + col) as usize])
    }

    pub fn kept_count(&self) -> usize {
        self.cells.iter().filter(|c| c.kept).count()
    }

    /// Whether core pixel `(x, y)` lies in a kept cell, i.e. went through the model.
    pub fn covers(&self, x: u32, y: u32) -> bool {
        self.cell(y / self.patch_size, x / self.patch_size).is_some_and(|c| c.kept)
    }

    fn check_core(&self, core: &CoreImage) -> Result<()> {
        if core.dims() != self.core_dims {
            return Err(Error::GridMismatch(format!(
                "core is {:?} (HxW), grid expects {:?}",
                core.dims(),
                self.core_dims
            )));
        }
        Ok(())
    }
}

/// One model-sized tile. Always `patch_size` square.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub pixels: RgbImage,
    pub row: u32,
    pub col: u32,
    pub core_id: String,
}

impl Patch {
    pub fn filename(&self) -> String {
        patch_filename(&self.core_id, self.row, self.col)
    }
}

/// `{core_id}_r{row}_c{col}.png`, the exchange-directory naming contract.
pub fn patch_filename(core_id: &str, row: u32, col: u32) -> String {
    format!("{core_id}_r{row}_c{col}.png")
}

pub fn make_grid(core: &CoreImage, mask: &TissueMask, patch_size: u32, tissue_min: f64) -> Result<PatchGrid> {
    if patch_size == 0 {
        return Err(Error::InvalidParameter("patch size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&tissue_min) {
        return Err(Error::InvalidParameter(format!("tissue_min {tissue_min} outside [0, 1]")));
    }
    if !mask.matches(core) {
        return Err(Error::DimensionMismatch("mask does not match core".into()));
    }
    let (h, w) = core.dims();
    let rows = h.div_ceil(patch_size);
    let cols = w.div_ceil(patch_size);
    let mut cells = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let (y0, x0) = (row * patch_size, col * patch_size);
            let ch = patch_size.min(h - y0);
            let cw = patch_size.min(w - x0);
            let tissue = (y0..y0 + ch)
                .map(|y| (x0..x0 + cw).filter(|&x| mask.get(x, y)).count())
                .sum::<usize>();
            let tissue_fraction = tissue as f64 / (f64::from(ch) * f64::from(cw));
            cells.push(GridCell {
                row,
                col,
                pad_bottom: patch_size - ch,
                pad_right: patch_size - cw,
                tissue_fraction,
                kept: tissue_fraction >= tissue_min,
            });
        }
    }
    Ok(PatchGrid {
        core_id: core.core_id.clone(),
        core_dims: (h, w),
        mpp: core.mpp,
        patch_size,
        rows,
        cols,
        tissue_min,
        cells,
    })
}

/// One zero-padded patch per kept cell, in row-major order.
pub fn extract_patches(core: &CoreImage, grid: &PatchGrid) -> Result<Vec<Patch>> {
    grid.check_core(core)?;
    let p = grid.patch_size;
    Ok(grid
        .cells
        .iter()
        .filter(|c| c.kept)
        .map(|cell| {
            let (y0, x0) = (cell.row * p, cell.col * p);
            let (ch, cw) = (p - cell.pad_bottom, p - cell.pad_right);
            let mut pixels = ImageBuffer::from_pixel(p, p, Rgb(BLACK));
            for y in 0..ch {
                let src = &core.raw()[((y0 + y) as usize * core.width() as usize + x0 as usize) * 3..][..cw as usize * 3];
                pixels.as_mut()[(y as usize * p as usize) * 3..][..cw as usize * 3].copy_from_slice(src);
            }
            Patch {
                pixels,
                row: cell.row,
                col: cell.col,
                core_id: core.core_id.clone(),
            }
        })
        .collect())
}

/// Paste patches back at their grid coordinates on a `fill` canvas, cropping
/// padding. Cells without a patch keep `fill`.
pub fn reconstruct(patches: &[Patch], grid: &PatchGrid, fill: [u8; 3]) -> Result<RgbImage> {
    let (h, w) = grid.core_dims;
    let p = grid.patch_size;
    let mut canvas = ImageBuffer::from_pixel(w, h, Rgb(fill));
    let mut seen = HashSet::with_capacity(patches.len());
    for patch in patches {
        let cell = grid.cell(patch.row, patch.col).ok_or(Error::PatchOutOfRange {
            row: patch.row,
            col: patch.col,
        })?;
        if !seen.insert((patch.row, patch.col)) {
            return Err(Error::DuplicatePatch {
                row: patch.row,
                col: patch.col,
            });
        }
        if patch.pixels.dimensions() != (p, p) {
            return Err(Error::ContractViolation(format!(
                "patch {} is {:?}, expected {p}x{p}",
                patch.filename(),
                patch.pixels.dimensions()
            )));
        }
        let (y0, x0) = (cell.row * p, cell.col * p);
        let (ch, cw) = (p - cell.pad_bottom, p - cell.pad_right);
        for y in 0..ch {
            let src = &patch.pixels.as_raw()[(y as usize * p as usize) * 3..][..cw as usize * 3];
            canvas.as_mut()[((y0 + y) as usize * w as usize + x0 as usize) * 3..][..cw as usize * 3]
                .copy_from_slice(src);
        }
    }
    Ok(canvas)
}

pub fn reconstruct_core(patches: &[Patch], grid: &PatchGrid, fill: [u8; 3], state: StainState) -> Result<CoreImage> {
    let pixels = reconstruct(patches, grid, fill)?;
    CoreImage::new(pixels, grid.mpp, grid.core_id.clone(), state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::WHITE;

    fn textured(w: u32, h: u32) -> CoreImage {
        let img = ImageBuffer::from_fn(w, h, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, ((x * y) % 239) as u8]));
        CoreImage::new(img, 0.5, "core", StainState::Stained).unwrap()
    }

    #[test]
    fn exact_fit_grid() {
        let core = CoreImage::filled(2048, 2048, [10, 10, 10], 0.5, "c").unwrap();
        let g = make_grid(&core, &TissueMask::full(2048, 2048), 1024, 0.05).unwrap();
        assert_eq!((g.rows, g.cols), (2, 2));
        assert!(g.cells.iter().all(|c| c.pad_bottom == 0 && c.pad_right == 0));
    }

    #[test]
    fn ragged_grid_padding() {
        // H=1500, W=1000
        let core = CoreImage::filled(1000, 1500, [10, 10, 10], 0.5, "c").unwrap();
        let g = make_grid(&core, &TissueMask::full(1000, 1500), 1024, 0.05).unwrap();
        assert_eq!((g.rows, g.cols), (2, 1));
        assert_eq!(g.cell(0, 0).unwrap().pad_bottom, 0);
        assert_eq!(g.cell(1, 0).unwrap().pad_bottom, 548);
        assert!(g.cells.iter().all(|c| c.pad_right == 24));
    }

    #[test]
    fn background_cells_dropped() {
        let core = CoreImage::filled(300, 200, WHITE, 0.5, "c").unwrap();
        let mask = crate::harmonize::tissue_mask(&core, Default::default());
        let g = make_grid(&core, &mask, 64, 0.05).unwrap();
        assert!(g.cells.iter().all(|c| !c.kept));
        assert!(extract_patches(&core, &g).unwrap().is_empty());
    }

    #[test]
    fn padding_is_black_and_roundtrip_exact() {
        let core = textured(130, 70);
        let g = make_grid(&core, &TissueMask::full(130, 70), 64, 0.0).unwrap();
        let patches = extract_patches(&core, &g).unwrap();
        assert_eq!(patches.len(), 3 * 2);
        let last = patches.last().unwrap();
        assert_eq!((last.row, last.col), (1, 2));
        // un-padded region of the last cell is 6 rows x 2 cols
        assert_eq!(last.pixels.get_pixel(2, 0).0, BLACK);
        assert_eq!(last.pixels.get_pixel(0, 6).0, BLACK);
        assert_eq!(reconstruct(&patches, &g, WHITE).unwrap(), core.pixels);
    }

    #[test]
    fn missing_cell_is_fill_and_order_irrelevant() {
        let core = textured(100, 100);
        let g = make_grid(&core, &TissueMask::full(100, 100), 40, 0.0).unwrap();
        let mut patches = extract_patches(&core, &g).unwrap();
        let removed = patches.remove(4); // cell (1,1)
        let img = reconstruct(&patches, &g, WHITE).unwrap();
        assert_eq!((removed.row, removed.col), (1, 1));
        assert_eq!(img.get_pixel(50, 50).0, WHITE);
        assert_eq!(img.get_pixel(10, 10), core.pixels.get_pixel(10, 10));
        patches.reverse();
        assert_eq!(reconstruct(&patches, &g, WHITE).unwrap(), img);
    }

    #[test]
    fn duplicate_and_out_of_range() {
        let core = textured(50, 50);
        let g = make_grid(&core, &TissueMask::full(50, 50), 32, 0.0).unwrap();
        let mut patches = extract_patches(&core, &g).unwrap();
        patches.push(patches[0].clone());
        assert!(matches!(reconstruct(&patches, &g, WHITE), Err(Error::DuplicatePatch { row: 0, col: 0 })));
        patches.pop();
        patches[0].row = 9;
        assert!(matches!(reconstruct(&patches, &g, WHITE), Err(Error::PatchOutOfRange { row: 9, .. })));
    }

    #[test]
    fn grid_mismatch_detected() {
        let core = textured(50, 50);
        let g = make_grid(&core, &TissueMask::full(50, 50), 32, 0.0).unwrap();
        assert!(matches!(extract_patches(&textured(51, 50), &g), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn filename_contract() {
        assert_eq!(patch_filename("case7", 3, 12), "case7_r3_c12.png");
    }
}
