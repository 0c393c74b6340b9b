//! Provenance record written next to every run's outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub code_version: String,
    pub seed: u64,
    /// Resolved configuration as TOML.
    pub config: String,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
    pub status: String,
    pub wall_time_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Manifest under construction; `start` writes it with status "running".
pub struct ManifestWriter {
    path: PathBuf,
    root: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl ManifestWriter {
    pub fn start(path: PathBuf, command: &str, seed: u64, config: String, inputs: &[&Path]) -> Result<Self> {
        let manifest = RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
            outputs: Vec::new(),
            status: "running".into(),
            wall_time_seconds: 0.0,
        };
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let w = Self {
            path,
            root,
            started: Instant::now(),
            manifest,
        };
        w.write()?;
        Ok(w)
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(&self.path, text).with_context(|| format!("writing {}", self.path.display()))
    }

    /// Records an output file by its path relative to the manifest.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let mut d = digest_file(path)?;
        if let Ok(rel) = path.strip_prefix(&self.root) {
            d.path = rel.display().to_string();
        }
        self.manifest.outputs.push(d);
        Ok(())
    }

    pub fn finish(mut self, status: &str) -> Result<()> {
        self.manifest.status = status.into();
        self.manifest.wall_time_seconds = self.started.elapsed().as_secs_f64();
        self.write()
    }
}

/// Writes `text` to `dir/name` and records it.
pub fn write_output(m: &mut ManifestWriter, dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    m.output(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
