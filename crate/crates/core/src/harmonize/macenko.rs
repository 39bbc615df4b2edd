//! Macenko stain-vector estimation and stain normalization in optical density
//! space.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::mask::TissueMask;
use crate::error::{Error, Result};
use crate::image::{to_u8, CoreImage};
use crate::util::percentile;

/// Minimum number of OD-passing tissue pixels needed for a stable estimate.
pub const MIN_OD_PIXELS: usize = 100;

/// Second eigenvalue below this fraction of the first means the OD cloud is
/// effectively one-dimensional.
const RANK_TOLERANCE: f64 = 1e-3;

/// How a pixel is judged transparent (background) in OD space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OdRejection {
    /// Drop pixels whose every channel is below `od_beta`.
    #[default]
    AllBelow,
    /// Drop pixels with any channel below `od_beta`.
    AnyBelow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacenkoParams {
    pub od_beta: f64,
    /// Angle percentile; the extremes are taken at `alpha` and `100 - alpha`.
    pub angle_alpha: f64,
    pub concentration_percentile: f64,
    pub rejection: OdRejection,
}

impl Default for MacenkoParams {
    fn default() -> Self {
        Self {
            od_beta: 0.15,
            angle_alpha: 1.0,
            concentration_percentile: 99.0,
            rejection: OdRejection::AllBelow,
        }
    }
}

/// Two unit OD stain vectors (hematoxylin, eosin) and their robust maximum
/// concentrations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainProfile {
    /// Row-major 3x2: rows are R, G, B; columns are hematoxylin, eosin.
    pub stain_matrix: [[f64; 2]; 3],
    pub max_concentrations: [f64; 2],
    pub od_beta: f64,
    pub angle_alpha: f64,
}

impl StainProfile {
    pub fn matrix(&self) -> Matrix3x2<f64> {
        let m = &self.stain_matrix;
        Matrix3x2::new(m[0][0], m[0][1], m[1][0], m[1][1], m[2][0], m[2][1])
    }

    pub fn hematoxylin(&self) -> Vector3<f64> {
        self.matrix().column(0).into_owned()
    }

    pub fn eosin(&self) -> Vector3<f64> {
        self.matrix().column(1).into_owned()
    }

    fn pseudo_inverse(&self) -> Result<Matrix2x3<f64>> {
        let s = self.matrix();
        let gram = s.transpose() * s;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::DegenerateStain("stain vectors are collinear".into()))?;
        Ok(inv * s.transpose())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.matrix();
        for (k, col) in s.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() > 1e-9 || col.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("stain column {k} is not a non-negative unit vector")));
            }
        }
        if self.max_concentrations.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter("max concentrations must be positive".into()));
        }
        Ok(())
    }
}

/// Optical density lookup for 8-bit intensities: `-log10((I + 1) / 256)`.
pub fn od_table() -> [f64; 256] {
    std::array::from_fn(|i| -((i as f64 + 1.0) / 256.0).log10())
}

pub fn estimate_stain_profile(core: &CoreImage, mask: &TissueMask, params: MacenkoParams) -> Result<StainProfile> {
    if !mask.matches(core) {
        return Err(Error::DimensionMismatch("mask does not match core".into()));
    }
    let lut = od_table();
    let tissue_od: Vec<Vector3<f64>> = core
        .raw()
        .chunks_exact(3)
        .zip(&mask.bits)
        .filter(|(_, &m)| m)
        .map(|(p, _)| Vector3::new(lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]))
        .collect();
    let transparent = |od: &Vector3<f64>| match params.rejection {
        OdRejection::AllBelow => od.iter().all(|&v| v < params.od_beta),
        OdRejection::AnyBelow => od.iter().any(|&v| v < params.od_beta),
    };
    let od: Vec<Vector3<f64>> = tissue_od.iter().filter(|v| !transparent(v)).copied().collect();
    if od.len() < MIN_OD_PIXELS {
        return Err(Error::InsufficientTissue(format!(
            "{} pixels above OD threshold {}, need {MIN_OD_PIXELS}",
            od.len(),
            params.od_beta
        )));
    }

    let n = od.len() as f64;
    let mean = od.iter().fold(Vector3::zeros(), |acc, v| acc + v) / n;
    let mut cov = Matrix3::zeros();
    for v in &od {
        let d = v - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= RANK_TOLERANCE * l1 {
        return Err(Error::DegenerateStain(format!(
            "OD covariance has rank < 2 (eigenvalues {l1:.3e}, {l2:.3e})"
        )));
    }
    let mut e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let mut e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into_owned();
    if e1.sum() < 0.0 {
        e1 = -e1;
    }
    if e2.sum() < 0.0 {
        e2 = -e2;
    }

    let mut angles: Vec<f64> = od.iter().map(|v| v.dot(&e2).atan2(v.dot(&e1))).collect();
    let lo = percentile(&mut angles, params.angle_alpha);
    let hi = percentile(&mut angles, 100.0 - params.angle_alpha);

    let v_lo = unit_stain(e1 * lo.cos() + e2 * lo.sin())?;
    let v_hi = unit_stain(e1 * hi.cos() + e2 * hi.sin())?;
    // hematoxylin carries the larger blue-channel OD weight
    let (h, e) = if v_lo[2] >= v_hi[2] { (v_lo, v_hi) } else { (v_hi, v_lo) };
    if h.dot(&e) > 1.0 - 1e-9 {
        return Err(Error::DegenerateStain("extreme stain directions coincide".into()));
    }

    let mut profile = StainProfile {
        stain_matrix: [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]],
        max_concentrations: [0.0; 2],
        od_beta: params.od_beta,
        angle_alpha: params.angle_alpha,
    };
    let pinv = profile.pseudo_inverse()?;
    let (mut ch, mut ce): (Vec<f64>, Vec<f64>) = tissue_od
        .iter()
        .map(|v| {
            let c: Vector2<f64> = pinv * v;
            (c[0].max(0.0), c[1].max(0.0))
        })
        .unzip();
    profile.max_concentrations = [
        percentile(&mut ch, params.concentration_percentile),
        percentile(&mut ce, params.concentration_percentile),
    ];
    if profile.max_concentrations.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::InsufficientTissue("a stain has zero robust concentration".into()));
    }
    Ok(profile)
}

/// Orient towards the positive octant, clip stray negative components and
/// normalize.
fn unit_stain(mut v: Vector3<f64>) -> Result<Vector3<f64>> {
    if v.sum() < 0.0 {
        v = -v;
    }
    v.apply(|x| *x = x.max(0.0));
    let norm = v.norm();
    if !(norm > 1e-12) {
        return Err(Error::DegenerateStain("stain direction vanished after clipping".into()));
    }
    Ok(v / norm)
}

/// Re-render `core` with the target stain vectors and concentration scale.
/// All pixels are transformed; zero OD (white) maps back to white.
pub fn normalize_stains(core: &CoreImage, source: &StainProfile, target: &StainProfile) -> Result<CoreImage> {
    source.validate()?;
    target.validate()?;
    let pinv = source.pseudo_inverse()?;
    let scale = Vector2::new(
        target.max_concentrations[0] / source.max_concentrations[0],
        target.max_concentrations[1] / source.max_concentrations[1],
    );
    let st = target.matrix();
    let lut = od_table();

    let mut out = core.clone();
    for px in out.pixels.as_mut().chunks_exact_mut(3) {
        let od = Vector3::new(lut[px[0] as usize], lut[px[1] as usize], lut[px[2] as usize]);
        let c = (pinv * od).component_mul(&scale);
        let od_t = st * c;
        for k in 0..3 {
            px[k] = to_u8(256.0 * 10f64.powf(-od_t[k]) - 1.0);
        }
    }
    Ok(out)
}
