//! Run manifests and content fingerprints.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::kv::KvFile;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.parent() != Some(root) || path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// SHA-256 over every file under `root` (except a top-level manifest), fed
/// as relative path, NUL, length, contents, in sorted path order.
pub fn dataset_fingerprint(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

/// What ran, on what, with which settings; written next to the artifacts it lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Option<TrainConfig>,
    pub dataset: Option<(PathBuf, String)>,
    pub seeds: Vec<(String, u64)>,
    /// Extra key/value settings (for example the synthetic spec).
    pub settings: Vec<(String, String)>,
    /// `(file name, sha256)` of every artifact in the output directory.
    pub artifacts: Vec<(String, String)>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        RunManifest {
            command,
            ..RunManifest::default()
        }
    }

    /// Hashes `dir/name` and lists it.
    pub fn add_artifact(&mut self, dir: &Path, name: &str) -> Result<()> {
        let digest = sha256_file(&dir.join(name))?;
        self.artifacts.push((name.to_string(), digest));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut kv = KvFile::default();
        kv.push("command", self.command.join(" "));
        kv.push("tool_version", TOOL_VERSION);
        if let Some((path, digest)) = &self.dataset {
            kv.push("dataset.path", path.display());
            kv.push("dataset.sha256", digest);
        }
        for (name, seed) in &self.seeds {
            kv.push(format!("seed.{name}"), seed);
        }
        for (k, v) in &self.settings {
            kv.push(k.clone(), v);
        }
        if let Some(cfg) = &self.config {
            for (k, v) in cfg.to_kv().entries() {
                kv.push(format!("config.{k}"), v);
            }
        }
        for (name, digest) in &self.artifacts {
            kv.push(format!("artifact.{name}"), digest);
        }
        kv.push("wall_clock_seconds", format!("{:.3}", self.wall_clock_seconds));
        kv.render()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
