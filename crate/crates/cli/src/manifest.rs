use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_sha256: Option<String>,
    artifacts: Vec<Artifact>,
}

/// Records what a command produced, keyed by config and checkpoint hashes.
pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config_sha256: String,
    checkpoint: Option<PathBuf>,
    out_dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config_sha256: String, out_dir: &Path, checkpoint: Option<&Path>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config_sha256,
            checkpoint: checkpoint.map(Path::to_path_buf),
            out_dir: out_dir.to_path_buf(),
            artifacts: vec![],
        }
    }

    pub fn add(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    /// Writes `manifest-<command>.json` into the output directory.
    pub fn write(self) -> Result<PathBuf> {
        let artifacts = self
            .artifacts
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(&self.out_dir).unwrap_or(p);
                Ok(Artifact { path: rel.display().to_string(), sha256: sha256_file(p)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let checkpoint_sha256 = self.checkpoint.as_deref().map(sha256_file).transpose()?;
        let m = Manifest {
            command: &self.command,
            seed: self.seed,
            config_sha256: &self.config_sha256,
            checkpoint_sha256,
            artifacts,
        };
        let path = self.out_dir.join(format!("manifest-{}.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }
}
