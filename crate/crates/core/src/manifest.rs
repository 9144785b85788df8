//! Per-output-directory record of how a command produced its files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Checksums every regular file below `dir`, skipping the run manifest.
/// Paths are relative to `dir` and sorted.
pub fn digest_tree(dir: &Path) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(format!("listing {}", d.display()), e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(format!("listing {}", d.display()), e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST_FILE) {
                files.push(path);
            }
        }
    }
    files.sort();
    files
        .iter()
        .map(|p| {
            let mut d = FileDigest::of(p)?;
            d.path = p.strip_prefix(dir).unwrap_or(p).to_path_buf();
            Ok(d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    pub tool_version: String,
    pub seed: u64,
    pub config_files: Vec<PathBuf>,
    /// Keys set explicitly by config files or flags.
    pub overrides: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("encoding run manifest", e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(RUN_MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
    }

    /// Outputs under `dir` whose checksum differs from the recorded one.
    pub fn changed_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut changed = Vec::new();
        for d in &self.outputs {
            match FileDigest::of(&dir.join(&d.path)) {
                Ok(now) if now.sha256 == d.sha256 => {}
                _ => changed.push(d.path.clone()),
            }
        }
        Ok(changed)
    }
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "abc").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "").unwrap();
        std::fs::write(dir.path().join(RUN_MANIFEST_FILE), "{}").unwrap();
        let outputs = digest_tree(dir.path()).unwrap();
        assert_eq!(outputs.len(), 2);
        assert_eq!(outputs[0].path, PathBuf::from("a.txt"));
        assert_eq!(
            outputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let m = RunManifest {
            command: "evaluate".into(),
            argv: vec!["evaluate".into()],
            cwd: PathBuf::from("/"),
            tool_version: "0".into(),
            seed: 42,
            config_files: vec![],
            overrides: vec![],
            config: serde_json::json!({"seed": 42}),
            inputs: vec![],
            outputs,
            timestamp: timestamp(),
        };
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
        assert!(m.changed_outputs(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.txt"), "abd").unwrap();
        assert_eq!(m.changed_outputs(dir.path()).unwrap().len(), 1);
    }
}
