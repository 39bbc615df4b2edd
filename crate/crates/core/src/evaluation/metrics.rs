//! Pixel similarity metrics on [0, 1]-scaled images.
//!
//! PCC and MSE use every RGB sample flattened into one vector. SSIM runs on
//! Rec. 601 luminance with an 11x11 Gaussian window over valid positions only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::CoreImage;
use crate::registration::GrayImage;

fn same_dims(a: &CoreImage, b: &CoreImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?} (HxW)", a.dims(), b.dims())));
    }
    Ok(())
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let flat = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if flat(a) || flat(b) {
        return Err(Error::DegenerateImage("zero variance".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateImage("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pcc(a: &CoreImage, b: &CoreImage) -> Result<f64> {
    same_dims(a, b)?;
    pearson(&a.normalized(), &b.normalized())
}

pub fn mse_values(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn mse(a: &CoreImage, b: &CoreImage) -> Result<f64> {
    same_dims(a, b)?;
    Ok(mse_values(&a.normalized(), &b.normalized()))
}

/// Peak 1.0; identical images give `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &CoreImage, b: &CoreImage) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filter.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &img[y * w..][..w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two [0, 1] grayscale planes.
pub fn ssim_gray(a: &GrayImage, b: &GrayImage, params: SsimParams) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch("SSIM inputs differ in size".into()));
    }
    if a.width < params.window || a.height < params.window {
        return Err(Error::TooSmall {
            width: a.width as u32,
            height: a.height as u32,
            window: params.window,
        });
    }
    let (w, h) = (a.width, a.height);
    let k = gaussian_kernel(params.window, params.sigma);
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let aa: Vec<f64> = a.data.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&a.data, w, h, &k);
    let mu_b = filter_valid(&b.data, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);

    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok((total / n as f64).min(1.0))
}

pub fn ssim(a: &CoreImage, b: &CoreImage, params: SsimParams) -> Result<f64> {
    same_dims(a, b)?;
    let ga = GrayImage::new(a.width() as usize, a.height() as usize, a.luminance_unit());
    let gb = GrayImage::new(b.width() as usize, b.height() as usize, b.luminance_unit());
    ssim_gray(&ga, &gb, params)
}
