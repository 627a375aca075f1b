use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to reproduce and audit one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: Config,
    pub ledger: Option<serde_json::Value>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub fracpin: String,
    pub schema: u32,
}

/// Output directory that records every file it writes.
pub struct OutputDir {
    root: PathBuf,
    outputs: Vec<OutputRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.outputs = std::mem::take(&mut self.outputs);
        let name = format!("{}.manifest.json", manifest.command);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        let path = self.root.join(&name);
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// Re-hashes every listed output; returns the paths that no longer match.
pub fn verify(root: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .outputs
        .iter()
        .filter(|o| match fs::read(root.join(&o.path)) {
            Ok(bytes) => sha256_hex(&bytes) != o.sha256,
            Err(_) => true,
        })
        .map(|o| o.path.clone())
        .collect()
}
