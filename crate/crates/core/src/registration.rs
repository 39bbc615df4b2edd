//! Rigid (rotation + translation) registration by maximizing the enhanced
//! correlation coefficient, solved with forward-additive Gauss-Newton steps on
//! a coarse-to-fine box pyramid.
//!
//! A transform maps coordinates of the fixed (template) frame into the moving
//! image: `moving(W(x)) ~ fixed(x)` with `W(x) = R(theta) x + t`. `warp`
//! resamples by exactly this inverse mapping, so `warp(moving, W)` lands on
//! the fixed frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_u8, CoreImage, WHITE};

/// Smallest pyramid level edge; coarser levels are not built.
const MIN_LEVEL_EDGE: usize = 16;
/// Fewer valid overlapping pixels than this aborts an iteration.
const MIN_OVERLAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Radians.
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub converged: bool,
    pub iterations: u32,
    pub final_ecc: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        Self {
            theta,
            tx,
            ty,
            converged: true,
            iterations: 0,
            final_ecc: 1.0,
        }
    }

    /// `[[cos, -sin, tx], [sin, cos, ty]]`
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (s, c) = self.theta.sin_cos();
        [[c, -s, self.tx], [s, c, self.ty]]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [[a, b, tx], [c, d, ty]] = self.matrix();
        (a * x + b * y + tx, c * x + d * y + ty)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        // R^T (y - t)
        Self::new(-self.theta, -(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty))
    }

    pub fn theta_degrees(&self) -> f64 {
        self.theta.to_degrees()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EccParams {
    pub max_iters: u32,
    pub eps: f64,
    /// Total number of pyramid levels including full resolution.
    pub pyramid_levels: u32,
    /// Correlation below this at the end is treated as a failed alignment.
    pub min_ecc: f64,
}

impl Default for EccParams {
    fn default() -> Self {
        Self {
            max_iters: 200,
            eps: 1e-6,
            pyramid_levels: 3,
            min_ecc: 0.3,
        }
    }
}

/// Single-channel f64 plane.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn from_core(core: &CoreImage) -> Self {
        Self::new(core.width() as usize, core.height() as usize, core.luminance())
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    fn half(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                data.push(s / 4.0);
            }
        }
        Self::new(w, h, data)
    }

    /// Central differences, one-sided at the borders.
    fn gradients(&self) -> (Self, Self) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                if xr > xl {
                    gx[y * w + x] = (self.at(xr, y) - self.at(xl, y)) / (xr - xl) as f64;
                }
                if yd > yu {
                    gy[y * w + x] = (self.at(x, yd) - self.at(x, yu)) / (yd - yu) as f64;
                }
            }
        }
        (Self::new(w, h, gx), Self::new(w, h, gy))
    }

    fn is_constant(&self) -> bool {
        let first = self.data[0];
        self.data.iter().all(|&v| v == first)
    }
}

/// Zero-mean, unit-norm inner product of two equally sized planes.
pub fn ecc_value(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.data.is_empty() || a.is_constant() || b.is_constant() {
        return Err(Error::DegenerateImage("zero intensity variance".into()));
    }
    Ok(zero_mean_correlation(&a.data, &b.data))
}

fn zero_mean_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

enum LevelOutcome {
    Converged { iterations: u32, rho: f64 },
    Exhausted { iterations: u32, rho: f64 },
    Failed(String),
}

/// Gauss-Newton ECC iterations at one pyramid level; updates `p` in place.
fn ecc_level(template: &GrayImage, image: &GrayImage, p: &mut [f64; 3], max_iters: u32, eps: f64) -> LevelOutcome {
    let (gx, gy) = image.gradients();
    let n_px = template.width * template.height;
    let mut tmpl = Vec::with_capacity(n_px);
    let mut warped = Vec::with_capacity(n_px);
    let mut jac: Vec<[f64; 3]> = Vec::with_capacity(n_px);
    let mut rho = 0.0;

    for it in 1..=max_iters {
        tmpl.clear();
        warped.clear();
        jac.clear();
        let (s, c) = p[0].sin_cos();
        for y in 0..template.height {
            let yf = y as f64;
            for x in 0..template.width {
                let xf = x as f64;
                let (u, v) = (c * xf - s * yf + p[1], s * xf + c * yf + p[2]);
                let Some(iw) = image.sample(u, v) else { continue };
                let gxw = gx.sample(u, v).unwrap_or(0.0);
                let gyw = gy.sample(u, v).unwrap_or(0.0);
                // d(u, v)/d(theta)
                let (du, dv) = (-(s * xf + c * yf), c * xf - s * yf);
                tmpl.push(template.at(x, y));
                warped.push(iw);
                jac.push([gxw * du + gyw * dv, gxw, gyw]);
            }
        }
        let n = tmpl.len();
        if n < MIN_OVERLAP {
            return LevelOutcome::Failed(format!("only {n} overlapping pixels"));
        }
        let nf = n as f64;
        let mt = tmpl.iter().sum::<f64>() / nf;
        let mw = warped.iter().sum::<f64>() / nf;
        let mut mj = [0.0; 3];
        for j in &jac {
            for k in 0..3 {
                mj[k] += j[k] / nf;
            }
        }

        let mut hess = Matrix3::<f64>::zeros();
        let mut img_proj = Vector3::<f64>::zeros();
        let mut tmp_proj = Vector3::<f64>::zeros();
        let (mut corr, mut img_sq, mut tmp_sq) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let g = Vector3::new(jac[i][0] - mj[0], jac[i][1] - mj[1], jac[i][2] - mj[2]);
            let (t, w) = (tmpl[i] - mt, warped[i] - mw);
            hess += g * g.transpose();
            img_proj += g * w;
            tmp_proj += g * t;
            corr += t * w;
            img_sq += w * w;
            tmp_sq += t * t;
        }
        if img_sq <= 0.0 || tmp_sq <= 0.0 {
            return LevelOutcome::Failed("flat overlap region".into());
        }
        rho = corr / (img_sq.sqrt() * tmp_sq.sqrt());

        let Some(hinv) = hess.try_inverse() else {
            return LevelOutcome::Failed("singular ECC Hessian".into());
        };
        let hinv_img = hinv * img_proj;
        let lambda_n = img_sq - img_proj.dot(&hinv_img);
        let lambda_d = corr - tmp_proj.dot(&hinv_img);
        if !(lambda_d > 0.0) {
            return LevelOutcome::Failed("images appear uncorrelated".into());
        }
        let lambda = lambda_n / lambda_d;
        // G^T (lambda * t - w)
        let err_proj = tmp_proj * lambda - img_proj;
        let dp = hinv * err_proj;
        if !dp.iter().all(|v| v.is_finite()) {
            return LevelOutcome::Failed("non-finite update".into());
        }
        p[0] += dp[0];
        p[1] += dp[1];
        p[2] += dp[2];
        if dp.norm() < eps {
            return LevelOutcome::Converged { iterations: it, rho };
        }
    }
    LevelOutcome::Exhausted {
        iterations: max_iters,
        rho,
    }
}

fn failed(fixed: &GrayImage, moving: &GrayImage, iterations: u32) -> RigidTransform {
    RigidTransform {
        converged: false,
        iterations,
        final_ecc: zero_mean_correlation(&fixed.data, &moving.data),
        ..RigidTransform::identity()
    }
}

/// Estimate the rigid transform that maps `fixed` coordinates into `moving`.
///
/// Never returns a partial estimate: any failure, an exhausted iteration
/// budget at full resolution, or a final correlation below `min_ecc` yields
/// the identity with `converged = false`.
pub fn ecc_align(moving: &CoreImage, fixed: &CoreImage, params: EccParams) -> Result<RigidTransform> {
    if moving.dims() != fixed.dims() {
        return Err(Error::DimensionMismatch(format!(
            "moving {:?} vs fixed {:?} (HxW); pad to a common frame first",
            moving.dims(),
            fixed.dims()
        )));
    }
    let mov = GrayImage::from_core(moving);
    let fix = GrayImage::from_core(fixed);
    if mov.is_constant() || fix.is_constant() {
        return Err(Error::DegenerateImage("zero intensity variance".into()));
    }
    Ok(ecc_align_gray(&mov, &fix, params))
}

pub fn ecc_align_gray(moving: &GrayImage, fixed: &GrayImage, params: EccParams) -> RigidTransform {
    let mut pyr_m = vec![moving.clone()];
    let mut pyr_f = vec![fixed.clone()];
    while pyr_m.len() < params.pyramid_levels.max(1) as usize {
        let last = pyr_m.last().unwrap();
        if last.width / 2 < MIN_LEVEL_EDGE || last.height / 2 < MIN_LEVEL_EDGE {
            break;
        }
        let next_m = last.half();
        let next_f = pyr_f.last().unwrap().half();
        pyr_m.push(next_m);
        pyr_f.push(next_f);
    }

    let mut p = [0.0f64; 3];
    let mut total_iters = 0;
    let levels = pyr_m.len();
    for level in (0..levels).rev() {
        let outcome = ecc_level(&pyr_f[level], &pyr_m[level], &mut p, params.max_iters, params.eps);
        let finest = level == 0;
        match outcome {
            LevelOutcome::Failed(reason) => {
                log::debug!("ECC failed at level {level}: {reason}");
                return failed(fixed, moving, total_iters);
            }
            LevelOutcome::Exhausted { iterations, rho } => {
                total_iters += iterations;
                if finest {
                    log::debug!("ECC did not converge (rho {rho:.4})");
                    return failed(fixed, moving, total_iters);
                }
            }
            LevelOutcome::Converged { iterations, rho } => {
                total_iters += iterations;
                if finest {
                    if rho < params.min_ecc {
                        log::debug!("ECC converged to weak correlation {rho:.4}");
                        return failed(fixed, moving, total_iters);
                    }
                    return RigidTransform {
                        theta: p[0],
                        tx: p[1],
                        ty: p[2],
                        converged: true,
                        iterations: total_iters,
                        final_ecc: rho.clamp(-1.0, 1.0),
                    };
                }
            }
        }
        // coarse pixel centre x_c sits at fine coordinate 2 x_c + 0.5
        let (s, c) = p[0].sin_cos();
        let (rx, ry) = (c - s, s + c);
        p[1] = 2.0 * p[1] + 0.5 * (1.0 - rx);
        p[2] = 2.0 * p[2] + 0.5 * (1.0 - ry);
    }
    unreachable!("finest level always returns")
}

/// Inverse-mapped bilinear resampling; samples outside the source take `fill`.
pub fn warp(image: &CoreImage, t: &RigidTransform, fill: [u8; 3]) -> CoreImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let src = image.raw();
    let mut out = image.clone();
    let dst = out.pixels.as_mut();
    let [[a, b, tx], [c, d, ty]] = t.matrix();
    let at = |x: usize, y: usize, k: usize| f64::from(src[(y * w + x) * 3 + k]);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let (u, v) = (a * xf + b * yf + tx, c * xf + d * yf + ty);
            let o = &mut dst[(y * w + x) * 3..][..3];
            if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
                o.copy_from_slice(&fill);
                continue;
            }
            let (x0, y0) = (u.floor() as usize, v.floor() as usize);
            let (fx, fy) = (u - x0 as f64, v - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            for k in 0..3 {
                let top = at(x0, y0, k) * (1.0 - fx) + at(x1, y0, k) * fx;
                let bottom = at(x0, y1, k) * (1.0 - fx) + at(x1, y1, k) * fx;
                o[k] = to_u8(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// `warp` with the default white background.
pub fn warp_white(image: &CoreImage, t: &RigidTransform) -> CoreImage {
    warp(image, t, WHITE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::StainState;
    use image::{ImageBuffer, Rgb};

    fn ramp(w: u32, h: u32) -> CoreImage {
        let img = ImageBuffer::from_fn(w, h, |x, _| Rgb([(x * 10) as u8, (x * 10) as u8, 0]));
        CoreImage::new(img, 0.5, "r", StainState::Stained).unwrap()
    }

    #[test]
    fn self_correlation_and_negation() {
        let a = GrayImage::new(4, 1, vec![1.0, 5.0, 2.0, 9.0]);
        let neg = GrayImage::new(4, 1, a.data.iter().map(|v| 255.0 - v).collect());
        assert!((ecc_value(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ecc_value(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let flat = GrayImage::new(4, 1, vec![3.0; 4]);
        assert!(matches!(ecc_value(&a, &flat), Err(Error::DegenerateImage(_))));
    }

    #[test]
    fn identity_warp_is_exact() {
        let r = ramp(9, 5);
        assert_eq!(warp_white(&r, &RigidTransform::identity()), r);
    }

    #[test]
    fn unit_translation_shifts_ramp() {
        let r = ramp(9, 5);
        let out = warp(&r, &RigidTransform::new(0.0, 1.0, 0.0), [1, 2, 3]);
        for y in 0..5 {
            for x in 0..8 {
                assert_eq!(out.pixels.get_pixel(x, y), r.pixels.get_pixel(x + 1, y));
            }
            assert_eq!(out.pixels.get_pixel(8, y).0, [1, 2, 3]);
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::new(0.3, 4.0, -2.5);
        let (x, y) = t.apply(10.0, 7.0);
        let (bx, by) = t.inverse().apply(x, y);
        assert!((bx - 10.0).abs() < 1e-12 && (by - 7.0).abs() < 1e-12);
    }
}
