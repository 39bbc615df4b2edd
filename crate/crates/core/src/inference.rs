//! Patch-transformation backends and the three inference pathways.
//!
//! The trained generators are opaque here: a backend maps a list of
//! `patch_size` square RGB patches to an equally keyed list. Besides the two
//! in-process mocks, an external runner can be driven through exchange
//! directories using the `{core_id}_r{row}_c{col}.png` naming contract.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonize::TissueMask;
use crate::image::{to_u8, CoreImage, StainState, WHITE};
use crate::ingest::load_rgb;
use crate::tiling::{extract_patches, make_grid, reconstruct_core, Patch, PatchGrid};

pub const IN_DIR_PLACEHOLDER: &str = "{in_dir}";
pub const OUT_DIR_PLACEHOLDER: &str = "{out_dir}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Identity,
    /// `out = clip(matrix * rgb + offset)` per pixel, in 8-bit units.
    AffineColor { matrix: [[f64; 3]; 3], offset: [f64; 3] },
    /// Program plus arguments; `{in_dir}` and `{out_dir}` are substituted
    /// per argument, no shell is involved.
    ExternalCommand {
        command: Vec<String>,
        #[serde(default)]
        exchange_dir: Option<PathBuf>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    PrecomputedDir { dir: PathBuf },
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::Identity | BackendSpec::PrecomputedDir { .. } => Ok(()),
            BackendSpec::AffineColor { matrix, offset } => {
                if matrix.iter().flatten().chain(offset).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidBackend("affine_color entries must be finite".into()))
                }
            }
            BackendSpec::ExternalCommand { command, .. } => {
                if command.is_empty() {
                    return Err(Error::InvalidBackend("external_command has an empty command".into()));
                }
                for ph in [IN_DIR_PLACEHOLDER, OUT_DIR_PLACEHOLDER] {
                    if !command.iter().any(|a| a.contains(ph)) {
                        return Err(Error::InvalidBackend(format!("external_command template lacks {ph}")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Identity => "identity",
            BackendSpec::AffineColor { .. } => "affine_color",
            BackendSpec::ExternalCommand { .. } => "external_command",
            BackendSpec::PrecomputedDir { .. } => "precomputed_dir",
        }
    }
}

pub fn transform_patches(patches: &[Patch], backend: &BackendSpec) -> Result<Vec<Patch>> {
    backend.validate()?;
    if patches.is_empty() {
        return Ok(Vec::new());
    }
    let size = patches[0].pixels.width();
    if patches.iter().any(|p| p.pixels.dimensions() != (size, size)) {
        return Err(Error::InvalidParameter("patches must share one square size".into()));
    }
    let out = match backend {
        BackendSpec::Identity => patches.to_vec(),
        BackendSpec::AffineColor { matrix, offset } => patches.iter().map(|p| affine(p, matrix, offset)).collect(),
        BackendSpec::PrecomputedDir { dir } => read_patches(dir, patches)?,
        BackendSpec::ExternalCommand {
            command,
            exchange_dir,
            timeout_secs,
        } => run_external(patches, command, exchange_dir.as_deref(), timeout_secs.map(Duration::from_secs))?,
    };
    check_contract(patches, &out, size)?;
    Ok(out)
}

fn affine(p: &Patch, m: &[[f64; 3]; 3], b: &[f64; 3]) -> Patch {
    let mut out = p.clone();
    for px in out.pixels.as_mut().chunks_exact_mut(3) {
        let v = [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])];
        for r in 0..3 {
            px[r] = to_u8(m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + b[r]);
        }
    }
    out
}

fn check_contract(input: &[Patch], output: &[Patch], size: u32) -> Result<()> {
    let want: BTreeSet<_> = input.iter().map(|p| (p.row, p.col)).collect();
    let got: BTreeSet<_> = output.iter().map(|p| (p.row, p.col)).collect();
    if want != got || output.len() != input.len() {
        return Err(Error::ContractViolation("backend changed the set of patch coordinates".into()));
    }
    if let Some(bad) = output.iter().find(|p| p.pixels.dimensions() != (size, size)) {
        return Err(Error::ContractViolation(format!(
            "{} is {:?}, expected {size}x{size}",
            bad.filename(),
            bad.pixels.dimensions()
        )));
    }
    Ok(())
}

fn write_patches(dir: &Path, patches: &[Patch]) -> Result<()> {
    for p in patches {
        crate::image::save_png(&p.pixels, &dir.join(p.filename()))?;
    }
    Ok(())
}

fn read_patches(dir: &Path, like: &[Patch]) -> Result<Vec<Patch>> {
    like.iter()
        .map(|p| {
            let path = dir.join(p.filename());
            if !path.is_file() {
                return Err(Error::IncompleteOutput(path.display().to_string()));
            }
            let pixels = load_rgb(&path)?;
            if pixels.dimensions() != p.pixels.dimensions() {
                return Err(Error::ContractViolation(format!(
                    "{} is {:?}, expected {:?}",
                    path.display(),
                    pixels.dimensions(),
                    p.pixels.dimensions()
                )));
            }
            Ok(Patch {
                pixels,
                row: p.row,
                col: p.col,
                core_id: p.core_id.clone(),
            })
        })
        .collect()
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// One command invocation per call (per core), never per patch.
fn run_external(
    patches: &[Patch],
    template: &[String],
    exchange_dir: Option<&Path>,
    timeout: Option<Duration>,
) -> Result<Vec<Patch>> {
    let _tmp;
    let root = match exchange_dir {
        Some(d) => d.join(&patches[0].core_id),
        None => {
            let t = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            let p = t.path().to_path_buf();
            _tmp = t;
            p
        }
    };
    let (in_dir, out_dir) = (root.join("in"), root.join("out"));
    fresh_dir(&in_dir)?;
    fresh_dir(&out_dir)?;
    write_patches(&in_dir, patches)?;

    let args: Vec<String> = template
        .iter()
        .map(|a| {
            a.replace(IN_DIR_PLACEHOLDER, &in_dir.to_string_lossy())
                .replace(OUT_DIR_PLACEHOLDER, &out_dir.to_string_lossy())
        })
        .collect();
    log::info!("backend: {}", args.join(" "));

    let mut child = Command::new(&args[0])
        .args(&args[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::BackendFailure {
            status: "spawn failed".into(),
            diagnostics: format!("{}: {e}", args[0]),
        })?;

    // drain pipes on threads so a chatty child cannot block on a full pipe
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| Error::io(&args[0], e))? {
            break Some(status);
        }
        if timeout.is_some_and(|t| started.elapsed() > t) {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let out_text = out_reader.join().unwrap_or_default();
    let err_text = err_reader.join().unwrap_or_default();
    if !err_text.is_empty() {
        log::info!("backend stderr: {}", err_text.trim_end());
    }

    match status {
        None => Err(Error::BackendFailure {
            status: format!("timed out after {:?}", timeout.unwrap_or_default()),
            diagnostics: err_text,
        }),
        Some(s) if !s.success() => Err(Error::BackendFailure {
            status: s.to_string(),
            diagnostics: format!("{}{}", err_text, out_text),
        }),
        Some(_) => read_patches(&out_dir, patches),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathwayKind {
    Destain,
    DirectStain,
    DestainRestain,
}

impl PathwayKind {
    pub const ALL: [PathwayKind; 3] = [PathwayKind::Destain, PathwayKind::DirectStain, PathwayKind::DestainRestain];

    pub fn as_str(&self) -> &'static str {
        match self {
            PathwayKind::Destain => "destain",
            PathwayKind::DirectStain => "direct_stain",
            PathwayKind::DestainRestain => "destain_restain",
        }
    }

    pub fn stage_count(&self) -> usize {
        match self {
            PathwayKind::DestainRestain => 2,
            _ => 1,
        }
    }

    /// Stain state of each stage's reconstruction, in order.
    pub fn stage_states(&self) -> &'static [StainState] {
        match self {
            PathwayKind::Destain => &[StainState::VirtualDestained],
            PathwayKind::DirectStain => &[StainState::VirtualStained],
            PathwayKind::DestainRestain => &[StainState::VirtualDestained, StainState::VirtualRestained],
        }
    }
}

impl std::str::FromStr for PathwayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PathwayKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown pathway `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pathway {
    pub name: PathwayKind,
    pub stages: Vec<BackendSpec>,
}

impl Pathway {
    pub fn destain(model: BackendSpec) -> Self {
        Self {
            name: PathwayKind::Destain,
            stages: vec![model],
        }
    }

    pub fn direct_stain(model: BackendSpec) -> Self {
        Self {
            name: PathwayKind::DirectStain,
            stages: vec![model],
        }
    }

    pub fn destain_restain(destain: BackendSpec, stain: BackendSpec) -> Self {
        Self {
            name: PathwayKind::DestainRestain,
            stages: vec![destain, stain],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != self.name.stage_count() {
            return Err(Error::InvalidBackend(format!(
                "{} needs {} stage(s), got {}",
                self.name.as_str(),
                self.name.stage_count(),
                self.stages.len()
            )));
        }
        self.stages.iter().try_for_each(BackendSpec::validate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingParams {
    pub patch_size: u32,
    pub tissue_min: f64,
    /// Canvas colour for cells without a patch.
    pub fill: [u8; 3],
}

impl Default for TilingParams {
    fn default() -> Self {
        Self {
            patch_size: crate::tiling::DEFAULT_PATCH_SIZE,
            tissue_min: crate::tiling::DEFAULT_TISSUE_MIN,
            fill: WHITE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathwayOutput {
    pub output: CoreImage,
    /// Reconstructions of earlier stages (the VDS inside the loop).
    pub intermediates: Vec<CoreImage>,
    pub grid: PatchGrid,
    pub warnings: Vec<String>,
}

impl PathwayOutput {
    /// All reconstructions keyed by stain state.
    pub fn by_state(&self) -> BTreeMap<String, &CoreImage> {
        self.intermediates
            .iter()
            .chain(std::iter::once(&self.output))
            .map(|c| (c.stain_state.to_string(), c))
            .collect()
    }
}

/// Tile, transform through each stage, reconstruct.
///
/// The second stage of the loop reuses the first stage's grid and kept flags:
/// the reconstructed intermediate is re-tiled with the same grid, so feeding a
/// destain output to the staining backend by hand gives identical results.
pub fn run_pathway(core: &CoreImage, mask: &TissueMask, pathway: &Pathway, tiling: TilingParams) -> Result<PathwayOutput> {
    pathway.validate()?;
    let grid = make_grid(core, mask, tiling.patch_size, tiling.tissue_min)?;
    let mut warnings = Vec::new();
    if grid.kept_count() == 0 {
        let msg = format!(
            "core `{}`: no patch reaches tissue fraction {}; output is background only",
            core.core_id, tiling.tissue_min
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut current = core.clone();
    let mut stages = Vec::with_capacity(pathway.stages.len());
    for (backend, &state) in pathway.stages.iter().zip(pathway.name.stage_states()) {
        let patches = extract_patches(&current, &grid)?;
        let transformed = transform_patches(&patches, backend)?;
        current = reconstruct_core(&transformed, &grid, tiling.fill, state)?;
        current.mpp = core.mpp;
        stages.push(current.clone());
    }
    let output = stages.pop().expect("at least one stage");
    Ok(PathwayOutput {
        output,
        intermediates: stages,
        grid,
        warnings,
    })
}
