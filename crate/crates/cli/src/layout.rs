//! File layout of a run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::Role;

pub const EVALUATION_FILES: [&str; 6] = [
    "metrics.csv",
    "intensity.csv",
    "aggregate.json",
    "stats.json",
    "domain_shift.json",
    "summary.json",
];

#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn role_path(&self, core_id: &str, role: Role) -> PathBuf {
        let (dir, tag) = match role {
            Role::GusRaw => ("extracted", "GUS"),
            Role::GheRaw => ("extracted", "GHE"),
            Role::Gus => ("harmonized", "GUS"),
            Role::Ghe => ("harmonized", "GHE"),
            Role::Vds => ("inferred", "VDS"),
            Role::Vhe => ("inferred", "VHE"),
            Role::Vher => ("inferred", "VHER"),
        };
        self.root.join(dir).join(format!("{core_id}_{tag}.png"))
    }

    pub fn grid_path(&self, core_id: &str, pathway: &str) -> PathBuf {
        self.root.join("inferred").join(format!("{core_id}_{pathway}.grid.json"))
    }

    pub fn status_path(&self, stage: &str) -> PathBuf {
        self.root.join("status").join(format!("{stage}.json"))
    }

    pub fn evaluation(&self, name: &str) -> PathBuf {
        self.root.join("evaluation").join(name)
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// Run-relative display form for provenance.
    pub fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).display().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    /// Outputs were already up to date.
    Cached,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreStatus {
    pub core_id: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CoreStatus {
    pub fn ok(core_id: &str, cached: bool) -> Self {
        Self {
            core_id: core_id.into(),
            outcome: if cached { Outcome::Cached } else { Outcome::Ok },
            reason: None,
            warnings: Vec::new(),
        }
    }

    pub fn failed(core_id: &str, reason: impl Into<String>) -> Self {
        Self {
            core_id: core_id.into(),
            outcome: Outcome::Failed,
            reason: Some(reason.into()),
            warnings: Vec::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.outcome != Outcome::Failed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub cores: Vec<CoreStatus>,
}

impl StageStatus {
    /// 0 when every core succeeded, 2 for partial failure, 1 when none did.
    pub fn exit_code(&self) -> i32 {
        let ok = self.cores.iter().filter(|c| c.succeeded()).count();
        if ok == self.cores.len() {
            0
        } else if ok == 0 {
            1
        } else {
            2
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoreStatus> {
        self.cores.iter().filter(|c| !c.succeeded())
    }

    pub fn save(&self, layout: &RunLayout) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::provenance::write_file(&layout.status_path(&self.stage), text.as_bytes())
    }

    pub fn load(layout: &RunLayout, stage: &str) -> CliResult<Option<Self>> {
        let path = layout.status_path(stage);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::io(path, e)),
        }
    }
}
