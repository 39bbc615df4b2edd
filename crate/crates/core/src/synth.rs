//! Seeded synthetic tissue for tests, demos and the bundled mock dataset.
//!
//! A scene is a continuous function of position, so a rotated or shifted copy
//! can be rendered exactly instead of being resampled from pixels.

use image::{ImageBuffer, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::to_u8;
use crate::registration::RigidTransform;
use crate::util::percentile;

/// Unit OD vectors, columns hematoxylin and eosin (rows R, G, B).
pub const REFERENCE_STAINS: [[f64; 2]; 3] = [[0.650_029, 0.072_133], [0.704_031, 0.991_832], [0.286_013, 0.105_194]];

pub fn unit_columns(m: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let mut out = m;
    for c in 0..2 {
        let n = (0..3).map(|r| m[r][c] * m[r][c]).sum::<f64>().sqrt();
        for r in 0..3 {
            out[r][c] = m[r][c] / n;
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_var: f64,
    cutoff_sq: f64,
    amp: f64,
}

/// Smooth random field: a sum of signed Gaussian blobs squashed into (0, 1).
#[derive(Clone, Debug)]
pub struct Texture {
    blobs: Vec<Blob>,
    gain: f64,
    buckets: Buckets,
}

/// Uniform grid of blob indices, ascending within each cell, so a lookup
/// visits the same blobs in the same order as a full scan.
#[derive(Clone, Debug)]
struct Buckets {
    origin: (f64, f64),
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn new(blobs: &[Blob], origin: (f64, f64), extent: (f64, f64), cell: f64) -> Self {
        let nx = (extent.0 / cell).ceil().max(1.0) as usize;
        let ny = (extent.1 / cell).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); nx * ny];
        let clamp = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        for (i, b) in blobs.iter().enumerate() {
            let r = b.cutoff_sq.sqrt();
            let (x0, x1) = (clamp((b.x - r - origin.0) / cell, nx), clamp((b.x + r - origin.0) / cell, nx));
            let (y0, y1) = (clamp((b.y - r - origin.1) / cell, ny), clamp((b.y + r - origin.1) / cell, ny));
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    cells[cy * nx + cx].push(i as u32);
                }
            }
        }
        Self { origin, cell, nx, ny, cells }
    }

    /// `None` outside the grid.
    fn get(&self, x: f64, y: f64) -> Option<&[u32]> {
        let (u, v) = ((x - self.origin.0) / self.cell, (y - self.origin.1) / self.cell);
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (cx, cy) = (u as usize, v as usize);
        (cx < self.nx && cy < self.ny).then(|| self.cells[cy * self.nx + cx].as_slice())
    }
}

impl Texture {
    /// Blobs with sigma in `[min_sigma, max_sigma]` covering a `width` x `height`
    /// area plus a margin, so shifted renders stay textured.
    pub fn random(rng: &mut impl Rng, width: f64, height: f64, min_sigma: f64, max_sigma: f64) -> Self {
        let margin = 3.0 * max_sigma + 20.0;
        let (w, h) = (width + 2.0 * margin, height + 2.0 * margin);
        let mean_sigma = 0.5 * (min_sigma + max_sigma);
        let count = ((w * h) / (mean_sigma * mean_sigma) * 0.8).ceil().max(8.0) as usize;
        let blobs: Vec<Blob> = (0..count)
            .map(|_| {
                let s: f64 = rng.random_range(min_sigma..=max_sigma);
                Blob {
                    x: rng.random_range(-margin..width + margin),
                    y: rng.random_range(-margin..height + margin),
                    inv_two_var: 1.0 / (2.0 * s * s),
                    cutoff_sq: (3.5 * s) * (3.5 * s),
                    amp: rng.random_range(-1.0..1.0),
                }
            })
            .collect();
        let buckets = Buckets::new(&blobs, (-margin, -margin), (w, h), 2.0 * min_sigma);
        Self { blobs, gain: 2.5, buckets }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        let mut add = |b: &Blob| {
            let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
            if d2 < b.cutoff_sq {
                s += b.amp * (-d2 * b.inv_two_var).exp();
            }
        };
        match self.buckets.get(x, y) {
            Some(ids) => ids.iter().for_each(|&i| add(&self.blobs[i as usize])),
            None => self.blobs.iter().for_each(add),
        }
        1.0 / (1.0 + (-self.gain * s).exp())
    }
}

/// One synthetic tissue core: an irregular outline filled with two stain
/// concentration fields.
#[derive(Clone, Debug)]
pub struct Scene {
    pub width: f64,
    pub height: f64,
    center: (f64, f64),
    radius: f64,
    outline: Texture,
    hema: Texture,
    eosin: Texture,
    /// Field values below which each stain is absent.
    onset: (f64, f64),
    /// Peak OD concentrations for (hematoxylin, eosin).
    pub max_concentration: (f64, f64),
}

impl Scene {
    pub fn new(seed: u64, width: f64, height: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = width.min(height);
        let outline = Texture::random(&mut rng, width, height, scale / 6.0, scale / 3.0);
        let hema = Texture::random(&mut rng, width, height, 3.0, 14.0);
        let eosin = Texture::random(&mut rng, width, height, 5.0, 18.0);
        let center = (
            width / 2.0 + rng.random_range(-0.05..0.05) * width,
            height / 2.0 + rng.random_range(-0.05..0.05) * height,
        );
        let mut scene = Self {
            width,
            height,
            center,
            radius: 0.40 * scale,
            outline,
            hema,
            eosin,
            onset: (0.5, 0.35),
            max_concentration: (rng.random_range(0.55..0.8), rng.random_range(0.35..0.55)),
        };
        // Pin each stain's coverage of the tissue (about 55% and 70%) so that
        // no scene ends up with a single stain.
        let mut h = Vec::new();
        let mut e = Vec::new();
        for i in 0..32 {
            for j in 0..32 {
                let (x, y) = ((i as f64 + 0.5) * width / 32.0, (j as f64 + 0.5) * height / 32.0);
                if scene.tissue(x, y) > 0.0 {
                    h.push(scene.hema.eval(x, y));
                    e.push(scene.eosin.eval(x, y));
                }
            }
        }
        if h.len() >= 8 {
            scene.onset = (percentile(&mut h, 45.0), percentile(&mut e, 30.0));
        }
        scene
    }

    /// Tissue weight in [0, 1]; 0 is glass.
    pub fn tissue(&self, x: f64, y: f64) -> f64 {
        let r = ((x - self.center.0).powi(2) + (y - self.center.1).powi(2)).sqrt() / self.radius;
        let edge = r + 0.35 * (self.outline.eval(x, y) - 0.5);
        ((1.0 - edge) * self.radius / 4.0).clamp(0.0, 1.0)
    }

    /// (hematoxylin, eosin) OD concentrations. Each stain is absent over a
    /// good share of the tissue, so pure-stain pixels are common; elsewhere
    /// the fields vary continuously (no plateaus).
    pub fn concentrations(&self, x: f64, y: f64) -> (f64, f64) {
        let t = self.tissue(x, y);
        if t == 0.0 {
            return (0.0, 0.0);
        }
        let ramp = |v: f64, lo: f64| (v - lo).max(0.0) / 0.45;
        let h = ramp(self.hema.eval(x, y), self.onset.0);
        let e = ramp(self.eosin.eval(x, y), self.onset.1);
        (t * h * self.max_concentration.0, t * e * self.max_concentration.1)
    }

    /// Beer-Lambert rendering with the given unit stain matrix.
    pub fn stained_pixel(&self, x: f64, y: f64, stains: &[[f64; 2]; 3]) -> [u8; 3] {
        let (ch, ce) = self.concentrations(x, y);
        std::array::from_fn(|k| {
            let od = stains[k][0] * ch + stains[k][1] * ce;
            to_u8(256.0 * 10f64.powf(-od) - 1.0)
        })
    }

    /// Label-free appearance: faint brownish contrast driven by tissue density.
    pub fn unstained_pixel(&self, x: f64, y: f64) -> [u8; 3] {
        let (ch, ce) = self.concentrations(x, y);
        let t = self.tissue(x, y);
        let density = 0.25 * t + 0.45 * ch + 0.30 * ce;
        [
            to_u8(238.0 - 70.0 * density),
            to_u8(236.0 - 85.0 * density),
            to_u8(232.0 - 105.0 * density),
        ]
    }
}

/// Render `width` x `height` pixels where pixel `(x, y)` shows the scene at
/// `map.apply(x, y)`.
pub fn render(width: u32, height: u32, map: &RigidTransform, f: impl Fn(f64, f64) -> [u8; 3]) -> RgbImage {
    ImageBuffer::from_fn(width, height, |x, y| {
        let (u, v) = map.apply(x as f64, y as f64);
        Rgb(f(u, v))
    })
}

/// Add independent sensor-like noise (sum of two uniforms, so roughly
/// bell-shaped) with the given standard deviation in 8-bit units.
pub fn add_noise(img: &mut RgbImage, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the sum of two U(-a, a) has variance 2a^2/3
    let a = sigma * (1.5f64).sqrt();
    for v in img.as_mut() {
        let n = rng.random_range(-a..a) + rng.random_range(-a..a);
        *v = to_u8(f64::from(*v) + n);
    }
}
