//! Dataset manifest (`manifest.toml`): cores, references and comparisons.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stainloop_core::inference::PathwayKind;
use stainloop_core::StainState;

use crate::error::{CliError, CliResult};

/// An image role in the comparison framework.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Extracted unstained core before calibration.
    #[serde(rename = "GUS_raw")]
    GusRaw,
    /// Extracted H&E core before harmonization.
    #[serde(rename = "GHE_raw")]
    GheRaw,
    #[serde(rename = "GUS")]
    Gus,
    #[serde(rename = "GHE")]
    Ghe,
    #[serde(rename = "VDS")]
    Vds,
    #[serde(rename = "VHE")]
    Vhe,
    #[serde(rename = "VHER")]
    Vher,
}

impl Role {
    pub const ALL: [Role; 7] = [Role::GusRaw, Role::GheRaw, Role::Gus, Role::Ghe, Role::Vds, Role::Vhe, Role::Vher];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::GusRaw => "GUS_raw",
            Role::GheRaw => "GHE_raw",
            Role::Gus => "GUS",
            Role::Ghe => "GHE",
            Role::Vds => "VDS",
            Role::Vhe => "VHE",
            Role::Vher => "VHER",
        }
    }

    pub fn stain_state(self) -> StainState {
        match self {
            Role::GusRaw | Role::Gus => StainState::Unstained,
            Role::GheRaw | Role::Ghe => StainState::Stained,
            Role::Vds => StainState::VirtualDestained,
            Role::Vhe => StainState::VirtualStained,
            Role::Vher => StainState::VirtualRestained,
        }
    }

    /// The slide the role's pixels come from. Intensity statistics use the
    /// tissue mask of that slide's harmonized core.
    pub fn from_stained_slide(self) -> bool {
        !matches!(self, Role::GusRaw | Role::Gus | Role::Vhe)
    }

    /// Pathways that write this role, if it is a model output.
    pub fn producers(self) -> &'static [PathwayKind] {
        match self {
            Role::Vds => &[PathwayKind::Destain, PathwayKind::DestainRestain],
            Role::Vhe => &[PathwayKind::DirectStain],
            Role::Vher => &[PathwayKind::DestainRestain],
            _ => &[],
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| CliError::Manifest(format!("unknown image role `{s}`")))
    }
}

/// `first` minus `second`; metrics register `second` onto `first`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub id: String,
    pub first: Role,
    pub second: Role,
    /// Pixel metrics in addition to intensity differences.
    #[serde(default = "yes")]
    pub metrics: bool,
}

fn yes() -> bool {
    true
}

fn cmp(id: &str, first: Role, second: Role, metrics: bool) -> Comparison {
    Comparison {
        id: id.into(),
        first,
        second,
        metrics,
    }
}

/// The eight rows of the validation framework, in table order.
pub fn default_comparisons() -> Vec<Comparison> {
    use Role::*;
    vec![
        cmp("GUS_vs_VDS", Gus, Vds, true),
        cmp("GHE_vs_VHER", Ghe, Vher, true),
        cmp("GHE_vs_VHE", Ghe, Vhe, true),
        cmp("VHE_vs_VHER", Vhe, Vher, true),
        cmp("rawGUS_vs_VDS", GusRaw, Vds, false),
        cmp("rawGHE_vs_VHER", GheRaw, Vher, false),
        cmp("GHE_vs_VDS", Ghe, Vds, false),
        cmp("VHER_vs_VDS", Vher, Vds, false),
    ]
}

/// A manifest entry: either a default row by id or a full definition.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum ComparisonEntry {
    Named(String),
    Custom(Comparison),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreEntry {
    pub core_id: String,
    pub unstained_path: PathBuf,
    pub stained_path: PathBuf,
    pub roi_unstained: PathBuf,
    pub roi_stained: PathBuf,
    pub source_mpp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub he_reference_path: PathBuf,
    pub unstained_reference_path: PathBuf,
    /// Resolution of both reference images; defaults to the target MPP.
    #[serde(default)]
    pub mpp: Option<f64>,
    /// Training-distribution images for the domain-shift summary.
    #[serde(default)]
    pub training_he: Vec<PathBuf>,
    #[serde(default)]
    pub training_unstained: Vec<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    comparisons: Option<Vec<ComparisonEntry>>,
    reference: Reference,
    cores: Vec<CoreEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory relative paths were resolved against.
    pub base: PathBuf,
    pub cores: Vec<CoreEntry>,
    pub reference: Reference,
    pub comparisons: Vec<Comparison>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).map_err(|e| match e {
            CliError::Manifest(m) => CliError::Manifest(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parse and resolve relative paths against `base`. Reference images must
    /// exist; per-core files are checked when each core is processed.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| CliError::Manifest(e.to_string()))?;
        let defaults = default_comparisons();
        let comparisons = match raw.comparisons {
            None => defaults.clone(),
            Some(entries) => entries
                .into_iter()
                .map(|e| match e {
                    ComparisonEntry::Named(id) => defaults.iter().find(|c| c.id == id).cloned().ok_or_else(|| {
                        let known: Vec<_> = defaults.iter().map(|c| c.id.as_str()).collect();
                        CliError::Manifest(format!("unknown comparison `{id}` (known: {})", known.join(", ")))
                    }),
                    ComparisonEntry::Custom(c) => Ok(c),
                })
                .collect::<CliResult<Vec<_>>>()?,
        };
        if comparisons.is_empty() {
            return Err(CliError::Manifest("no comparisons configured".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &comparisons {
            if !valid_id(&c.id) || !seen.insert(c.id.clone()) {
                return Err(CliError::Manifest(format!("comparison id `{}` is invalid or repeated", c.id)));
            }
        }

        if raw.cores.is_empty() {
            return Err(CliError::Manifest("no cores listed".into()));
        }
        let mut ids = BTreeSet::new();
        let mut cores = raw.cores;
        for core in &mut cores {
            if !valid_id(&core.core_id) {
                return Err(CliError::Manifest(format!(
                    "core_id `{}` must be non-empty and use only letters, digits, `-`, `_` and `.`",
                    core.core_id
                )));
            }
            if !ids.insert(core.core_id.clone()) {
                return Err(CliError::Manifest(format!("duplicate core_id `{}`", core.core_id)));
            }
            if !(core.source_mpp.is_finite() && core.source_mpp > 0.0) {
                return Err(CliError::Manifest(format!("core `{}`: source_mpp must be > 0", core.core_id)));
            }
            for p in [&mut core.unstained_path, &mut core.stained_path, &mut core.roi_unstained, &mut core.roi_stained] {
                *p = base.join(&*p);
            }
        }

        let mut reference = raw.reference;
        if reference.mpp.is_some_and(|m| !(m.is_finite() && m > 0.0)) {
            return Err(CliError::Manifest("reference.mpp must be > 0".into()));
        }
        for p in [&mut reference.he_reference_path, &mut reference.unstained_reference_path]
            .into_iter()
            .chain(reference.training_he.iter_mut())
            .chain(reference.training_unstained.iter_mut())
        {
            *p = base.join(&*p);
            if !p.is_file() {
                return Err(CliError::Manifest(format!("reference image {} does not exist", p.display())));
            }
        }
        Ok(Self {
            base: base.to_path_buf(),
            cores,
            reference,
            comparisons,
        })
    }

    /// Every model-output role used by a comparison must come from one of
    /// `pathways`.
    pub fn check_producible(&self, pathways: &[PathwayKind]) -> CliResult<()> {
        for c in &self.comparisons {
            for role in [c.first, c.second] {
                let producers = role.producers();
                if !producers.is_empty() && !producers.iter().any(|p| pathways.contains(p)) {
                    let names: Vec<_> = producers.iter().map(|p| p.as_str()).collect();
                    return Err(CliError::Config(format!(
                        "comparison `{}` needs {role}, which only the {} pathway(s) produce",
                        c.id,
                        names.join(" or ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Path as written relative to the manifest, for provenance records.
    pub fn display_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.base).unwrap_or(p).display().to_string()
    }
}
