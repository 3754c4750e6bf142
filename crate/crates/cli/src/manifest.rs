use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use relay_scope::dataset::sha256_file;
use relay_scope::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub ok: bool,
}

/// Record of everything a run directory holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    /// Keyed by path relative to the run directory.
    pub artifacts: BTreeMap<String, Artifact>,
    /// Files a failed stage left behind or claimed; they are not trustworthy.
    #[serde(default)]
    pub invalid: Vec<String>,
    pub stages: Vec<StageRun>,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_digest: &str) -> Self {
        let now = now_unix();
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config_digest.to_string(),
            created_unix: now,
            updated_unix: now,
            artifacts: BTreeMap::new(),
            invalid: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The manifest in `run_dir`, or a fresh one when absent or written
    /// under a different config.
    pub fn open(run_dir: &Path, config_digest: &str) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if path.exists() {
            let existing = RunManifest::load(&path)?;
            if existing.config_digest == config_digest {
                return Ok(existing);
            }
            log::warn!(
                "{} was written under another config; starting a new manifest",
                path.display()
            );
        }
        Ok(RunManifest::new(config_digest))
    }

    pub fn save(&mut self, run_dir: &Path) -> Result<()> {
        self.updated_unix = now_unix();
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&path, text.as_bytes())
    }

    pub fn record(&mut self, run_dir: &Path, relative: &str, stage: &str) -> Result<()> {
        let path = run_dir.join(relative);
        let bytes = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        self.invalid.retain(|p| p != relative);
        self.artifacts.insert(
            relative.to_string(),
            Artifact {
                sha256: sha256_file(&path)?,
                bytes,
                stage: stage.to_string(),
            },
        );
        Ok(())
    }

    pub fn mark_invalid(&mut self, relative: &str) {
        self.artifacts.remove(relative);
        if !self.invalid.iter().any(|p| p == relative) {
            self.invalid.push(relative.to_string());
        }
    }
}

/// Writes through a sibling temporary file so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
