use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Grid point index for sweeps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<usize>,
    pub ok: bool,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    pub started: u64,
    pub finished: u64,
    pub outcomes: Vec<SeedOutcome>,
    pub invariants: Vec<Invariant>,
    /// Paths relative to the experiment directory.
    pub files: Vec<String>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, experiment: &str, config_hash: &str) -> Self {
        RunManifest {
            command: command.into(),
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            started: now(),
            finished: 0,
            outcomes: vec![],
            invariants: vec![],
            files: vec![],
        }
    }

    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }

    /// Writes `manifest.json` into `dir` through a temporary file and rename.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished = now();
        self.files.sort();
        self.files.dedup();
        let tmp = dir.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&tmp, text + "\n").with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, dir.join("manifest.json")).context("renaming manifest")?;
        Ok(self)
    }
}

/// Tracks files written below an experiment directory.
pub struct Outputs {
    pub root: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn new(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Outputs { root, written: vec![] })
    }

    pub fn write(&mut self, rel: &str, body: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(body)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, text.as_bytes())
    }

    pub fn extend(&mut self, files: impl IntoIterator<Item = String>) {
        self.written.extend(files);
    }

    pub fn files(&self) -> Vec<String> {
        self.written.clone()
    }
}
