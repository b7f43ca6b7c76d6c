//! Output files and the run manifest. Every file is written to a temporary
//! name in its final directory and renamed into place.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    /// Resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub init_seeds: Vec<(String, u64)>,
    pub artifacts: Vec<ArtifactRecord>,
    /// `ok`, or `diverged` when some training run produced a non-finite
    /// loss (its trace is truncated and marked).
    pub status: String,
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn artifacts_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a ArtifactRecord> + 'a {
        self.artifacts.iter().filter(move |a| a.kind == kind)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Atomically replace `path` with `bytes`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Files written by one run.
#[derive(Debug)]
pub struct Artifacts {
    root: PathBuf,
    records: Vec<ArtifactRecord>,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| HarnessError::io(&root, e))?;
        Ok(Self {
            root,
            records: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, kind: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        write_atomic(&path, bytes)?;
        self.records.retain(|r| r.path != rel);
        self.records.push(ArtifactRecord {
            path: rel.to_string(),
            kind: kind.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn records(&self) -> &[ArtifactRecord] {
        &self.records
    }

    pub fn find(&self, kind: &str) -> Option<&ArtifactRecord> {
        self.records.iter().find(|r| r.kind == kind)
    }

    /// Write the manifest, listing everything written so far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.artifacts = self.records;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path()).unwrap();
        a.write("x/y.csv", "trace", b"a,b\n").unwrap();
        a.write("x/y.csv", "trace", b"a,b\n1,2\n").unwrap();
        assert_eq!(a.records().len(), 1);
        assert_eq!(fs::read(dir.path().join("x/y.csv")).unwrap(), b"a,b\n1,2\n");
        assert_eq!(a.records()[0].sha256, sha256_hex(b"a,b\n1,2\n"));
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("x")).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
