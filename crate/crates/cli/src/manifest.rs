//! Run manifests: what a command read, wrote and with which settings.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sfocc::io::{read_json, sha256_file, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> Result<Self> {
        Ok(Self {
            path: label,
            sha256: sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Outputs may be partial and must not be used.
    Invalid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: PathBuf,
    pub config_sha256: String,
    /// `--seed` given on the command line, if any.
    pub seed_override: Option<u64>,
    /// Seed actually used.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub variant: Option<String>,
    /// Input files with absolute paths.
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileDigest>,
    /// Outputs that legitimately differ between runs (timings).
    pub volatile_outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: RunStatus,
    pub error: Option<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(read_json(path)?)
    }

    /// Output digests that must reproduce exactly.
    pub fn stable_outputs(&self) -> Vec<&FileDigest> {
        self.outputs
            .iter()
            .filter(|o| !self.volatile_outputs.contains(&o.path))
            .collect()
    }
}
