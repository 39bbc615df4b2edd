#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Parser;
use image::RgbImage;
use stainloop::layout::{RunLayout, StageStatus};
use stainloop::synth::{write_dataset, SynthOptions};
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_stainloop");

/// A synthetic dataset in its own temporary directory.
pub struct Dataset {
    pub dir: TempDir,
    pub manifest: PathBuf,
}

impl Dataset {
    pub fn new(cores: usize, size: u32, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), SynthOptions { cores, size, seed }).unwrap();
        Self { dir, manifest }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write(&self, rel: &str, text: &str) -> PathBuf {
        let p = self.path(rel);
        std::fs::write(&p, text).unwrap();
        p
    }

    /// Mock affine backends at the given patch size.
    pub fn mock_config(&self, patch_size: u32) -> PathBuf {
        self.write(&format!("mock_{patch_size}.toml"), &stainloop::synth::mock_config(patch_size))
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.path(name)
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Run the command line in-process; returns the exit code.
pub fn stainloop(args: &[&str]) -> i32 {
    let cli = stainloop::Cli::try_parse_from(std::iter::once("stainloop").chain(args.iter().copied())).unwrap();
    stainloop::run(&cli)
}

/// `stainloop <cmd> --manifest M [--config C] --out O [extra...]`
pub fn stage(cmd: &str, manifest: &Path, config: Option<&Path>, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![cmd, "--manifest", s(manifest), "--out", s(out)];
    if let Some(c) = config {
        args.extend(["--config", s(c)]);
    }
    args.extend(extra);
    stainloop(&args)
}

pub fn status(out: &Path, stage: &str) -> StageStatus {
    StageStatus::load(&RunLayout::new(out), stage).unwrap().expect("status file")
}

pub fn png(path: &Path) -> RgbImage {
    image::open(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())).to_rgb8()
}

pub fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let n = a.as_raw().len() as f64;
    a.as_raw().iter().zip(b.as_raw()).map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs()).sum::<f64>() / n
}

/// Relative path -> bytes for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// CSV rows as header-keyed maps.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_owned)).collect())
        .collect()
}
