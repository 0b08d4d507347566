//! Run manifests: what was run, with which inputs, and what it produced.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::commands::CommandPlan;
use super::CliError;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output root for artifacts; as given for inputs.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_seconds: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration; replaying it reproduces the artifacts.
    pub config: CommandPlan,
    pub master_seed: Option<u64>,
    pub jobs: usize,
    pub inputs: Vec<FileDigest>,
    pub output_root: PathBuf,
    pub artifacts: Vec<FileDigest>,
    pub summary: serde_json::Value,
    pub timings: Timings,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of `files`, recorded relative to `root`.
pub fn digest_artifacts(root: &Path, files: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
    files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(root).unwrap_or(f).to_path_buf();
            Ok(FileDigest {
                path: rel,
                sha256: sha256_file(f)?,
            })
        })
        .collect()
}

pub struct Clock {
    started: SystemTime,
    t0: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Self {
            started: SystemTime::now(),
            t0: Instant::now(),
        }
    }

    pub fn finish(&self) -> Timings {
        Timings {
            started_unix_seconds: self
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            wall_seconds: self.t0.elapsed().as_secs_f64(),
        }
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
        }
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: not a run manifest: {e}", path.display())))
    }
}

/// Artifacts whose replayed digest differs from the recorded one, or that
/// the replay did not produce.
pub fn mismatches(recorded: &[FileDigest], replayed: &[FileDigest]) -> Vec<String> {
    let mut out = Vec::new();
    for r in recorded {
        match replayed.iter().find(|p| p.path == r.path) {
            None => out.push(format!("{}: not produced", r.path.display())),
            Some(p) if p.sha256 != r.sha256 => out.push(format!("{}: checksum differs", r.path.display())),
            Some(_) => {}
        }
    }
    for p in replayed {
        if !recorded.iter().any(|r| r.path == p.path) {
            out.push(format!("{}: not in the original run", p.path.display()));
        }
    }
    out
}
