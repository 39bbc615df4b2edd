//! Run configuration (`config.toml`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stainloop_core::evaluation::SsimParams;
use stainloop_core::harmonize::{ChannelWeights, HarmonizeParams, MacenkoParams, MaskParams, MaskStrategy};
use stainloop_core::inference::{BackendSpec, Pathway, PathwayKind, TilingParams};
use stainloop_core::ingest::DEFAULT_STRIP_HEIGHT;
use stainloop_core::registration::EccParams;
use stainloop_core::tiling::{DEFAULT_PATCH_SIZE, DEFAULT_TISSUE_MIN};

use crate::error::{CliError, CliResult};

/// Seconds; overrides `timeout_secs` of every external-command backend.
pub const TIMEOUT_ENV: &str = "STAINLOOP_BACKEND_TIMEOUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    pub destain: BackendSpec,
    pub stain: BackendSpec,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            destain: BackendSpec::Identity,
            stain: BackendSpec::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub target_mpp: f64,
    pub patch_size: u32,
    pub tissue_min: f64,
    /// Rows held in memory while cropping a core out of a slide.
    pub strip_height: u32,
    pub align: bool,
    /// Run directory; relative to the config file. `--out` wins.
    pub out: Option<PathBuf>,
    pub pathways: Vec<PathwayKind>,
    /// Significance level for the LSD post hoc tests.
    pub alpha: f64,
    pub mask: MaskParams,
    pub macenko: MacenkoParams,
    pub channel_weights: ChannelWeights,
    pub ecc: EccParams,
    pub ssim: SsimParams,
    pub backends: Backends,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            target_mpp: 0.5,
            patch_size: DEFAULT_PATCH_SIZE,
            tissue_min: DEFAULT_TISSUE_MIN,
            strip_height: DEFAULT_STRIP_HEIGHT,
            align: true,
            out: None,
            pathways: PathwayKind::ALL.to_vec(),
            alpha: 0.05,
            mask: MaskParams::default(),
            macenko: MacenkoParams::default(),
            channel_weights: ChannelWeights::default(),
            ecc: EccParams::default(),
            ssim: SsimParams::default(),
            backends: Backends::default(),
        }
    }
}

fn range_err(what: &str, v: impl std::fmt::Display, range: &str) -> CliError {
    CliError::Config(format!("{what} = {v} outside {range}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Make backend directories and `out` absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for spec in [&mut self.backends.destain, &mut self.backends.stain] {
            match spec {
                BackendSpec::PrecomputedDir { dir } => join(dir),
                BackendSpec::ExternalCommand {
                    exchange_dir: Some(dir), ..
                } => join(dir),
                _ => {}
            }
        }
        if let Some(out) = &mut self.out {
            join(out);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.target_mpp.is_finite() && self.target_mpp > 0.0) {
            return Err(range_err("target_mpp", self.target_mpp, "(0, inf)"));
        }
        if self.patch_size == 0 {
            return Err(range_err("patch_size", self.patch_size, "[1, inf)"));
        }
        if !(0.0..=1.0).contains(&self.tissue_min) {
            return Err(range_err("tissue_min", self.tissue_min, "[0, 1]"));
        }
        if self.strip_height == 0 {
            return Err(range_err("strip_height", self.strip_height, "[1, inf)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(range_err("alpha", self.alpha, "(0, 1)"));
        }
        if self.pathways.is_empty() {
            return Err(CliError::Config("pathways is empty".into()));
        }
        if self.mask.strategy == MaskStrategy::LuminanceThreshold && !(0.0..=1.0).contains(&self.mask.threshold) {
            return Err(range_err("mask.threshold", self.mask.threshold, "[0, 1]"));
        }
        let m = &self.macenko;
        if !(m.od_beta >= 0.0 && m.od_beta.is_finite()) {
            return Err(range_err("macenko.od_beta", m.od_beta, "[0, inf)"));
        }
        if !(0.0..50.0).contains(&m.angle_alpha) {
            return Err(range_err("macenko.angle_alpha", m.angle_alpha, "[0, 50)"));
        }
        if !(m.concentration_percentile > 0.0 && m.concentration_percentile <= 100.0) {
            return Err(range_err("macenko.concentration_percentile", m.concentration_percentile, "(0, 100]"));
        }
        self.channel_weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let e = &self.ecc;
        if e.max_iters == 0 || e.pyramid_levels == 0 {
            return Err(CliError::Config("ecc.max_iters and ecc.pyramid_levels must be >= 1".into()));
        }
        if !(e.eps > 0.0) || !(-1.0..=1.0).contains(&e.min_ecc) {
            return Err(CliError::Config(format!("ecc.eps {} must be > 0 and ecc.min_ecc {} in [-1, 1]", e.eps, e.min_ecc)));
        }
        let s = &self.ssim;
        if s.window < 1 || s.window % 2 == 0 || !(s.sigma > 0.0) || !(s.k1 > 0.0) || !(s.k2 > 0.0) {
            return Err(CliError::Config(format!("ssim parameters {s:?}: window must be odd, sigma/k1/k2 positive")));
        }
        for spec in [&self.backends.destain, &self.backends.stain] {
            spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn harmonize_params(&self) -> HarmonizeParams {
        HarmonizeParams {
            mask: self.mask,
            macenko: self.macenko,
        }
    }

    pub fn tiling(&self) -> TilingParams {
        TilingParams {
            patch_size: self.patch_size,
            tissue_min: self.tissue_min,
            ..TilingParams::default()
        }
    }

    /// Apply the timeout environment variable to external backends.
    pub fn apply_timeout_env(&mut self, value: Option<&str>) -> CliResult<()> {
        let Some(v) = value else { return Ok(()) };
        let secs: u64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{TIMEOUT_ENV}={v:?} is not a whole number of seconds")))?;
        for spec in [&mut self.backends.destain, &mut self.backends.stain] {
            if let BackendSpec::ExternalCommand { timeout_secs, .. } = spec {
                *timeout_secs = Some(secs);
            }
        }
        Ok(())
    }

    pub fn pathway(&self, kind: PathwayKind) -> Pathway {
        let b = self.backends.clone();
        match kind {
            PathwayKind::Destain => Pathway::destain(b.destain),
            PathwayKind::DirectStain => Pathway::direct_stain(b.stain),
            PathwayKind::DestainRestain => Pathway::destain_restain(b.destain, b.stain),
        }
    }
}
