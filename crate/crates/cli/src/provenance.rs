//! Provenance sidecars and skip-by-checksum.
//!
//! Every output `X` gets `X.prov.json` recording its SHA-256, the stage that
//! wrote it, the checksums of its inputs and the parameters used. A stage
//! can skip work when every output exists, still matches its recorded
//! checksum, and was produced from the same inputs and parameters.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SIDECAR_SUFFIX: &str = ".prov.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(SIDECAR_SUFFIX);
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub role: String,
    /// Relative to the manifest for source files, to the run directory for
    /// intermediate files.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub file: String,
    pub sha256: String,
    pub stage: String,
    pub core_id: Option<String>,
    pub inputs: Vec<InputRef>,
    pub params: serde_json::Value,
    /// Hash over stage, inputs and params.
    pub input_key: String,
    pub tool: String,
}

/// What a stage knows about one unit of work before running it.
#[derive(Clone, Debug)]
pub struct WorkKey {
    pub stage: String,
    pub core_id: Option<String>,
    pub inputs: Vec<InputRef>,
    pub params: serde_json::Value,
}

impl WorkKey {
    pub fn new(stage: &str, core_id: Option<&str>, params: serde_json::Value) -> Self {
        Self {
            stage: stage.into(),
            core_id: core_id.map(str::to_owned),
            inputs: Vec::new(),
            params,
        }
    }

    pub fn input(&mut self, role: &str, display: String, path: &Path) -> CliResult<()> {
        self.inputs.push(InputRef {
            role: role.into(),
            path: display,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn key(&self) -> String {
        let doc = serde_json::json!({
            "stage": self.stage,
            "core_id": self.core_id,
            "inputs": self.inputs,
            "params": self.params,
        });
        sha256_bytes(doc.to_string().as_bytes())
    }

    /// All `outputs` exist, match their sidecars, and were made from this key.
    pub fn is_fresh(&self, outputs: &[PathBuf]) -> bool {
        let key = self.key();
        !outputs.is_empty()
            && outputs.iter().all(|out| {
                let Ok(text) = fs::read_to_string(sidecar_path(out)) else {
                    return false;
                };
                let Ok(prov) = serde_json::from_str::<Provenance>(&text) else {
                    return false;
                };
                prov.input_key == key && sha256_file(out).is_ok_and(|h| h == prov.sha256)
            })
    }

    /// Write `bytes` to `path` with its sidecar.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_file(path, bytes)?;
        self.write_sidecar(path, sha256_bytes(bytes))
    }

    pub fn write_sidecar(&self, path: &Path, sha256: String) -> CliResult<()> {
        let prov = Provenance {
            file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256,
            stage: self.stage.clone(),
            core_id: self.core_id.clone(),
            inputs: self.inputs.clone(),
            params: self.params.clone(),
            input_key: self.key(),
            tool: concat!("stainloop ", env!("CARGO_PKG_VERSION")).into(),
        };
        let mut text = serde_json::to_string_pretty(&prov)?;
        text.push('\n');
        write_file(&sidecar_path(path), text.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Remove an output and its sidecar if present.
pub fn remove_output(path: &Path) {
    let _ = fs::remove_file(path);
    let _ = fs::remove_file(sidecar_path(path));
}
