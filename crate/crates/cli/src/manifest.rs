use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::digest64;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// 64-bit digest of the effective configuration written to `config.toml`.
    pub config_digest: String,
    pub config_source: Option<String>,
    pub seed: u64,
    pub version: String,
    pub files: Vec<FileEntry>,
    pub duration_seconds: f64,
    pub dropped_points: usize,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::config(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Reads a manifest and checks that the stored configuration still hashes
    /// to the recorded digest.
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("malformed manifest {}: {e}", path.display())))?;
        let config = dir.join(CONFIG_FILE);
        let bytes = fs::read(&config).map_err(|e| CliError::io(&config, e))?;
        let digest = digest64(&bytes);
        if digest != manifest.config_digest {
            return Err(CliError::config(format!(
                "config digest mismatch: manifest {} but {} hashes to {digest}",
                manifest.config_digest,
                config.display()
            )));
        }
        Ok(manifest)
    }

    /// Checks that the directory holds exactly the listed files, with matching digests.
    pub fn verify(&self, dir: &Path) -> CliResult<()> {
        let listed: BTreeSet<&str> = self.files.iter().map(|f| f.path.as_str()).collect();
        for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
            let entry = entry.map_err(|e| CliError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_FILE && !listed.contains(name.as_str()) {
                return Err(CliError::config(format!("{name} is not listed in the manifest")));
            }
        }
        for file in &self.files {
            let path = dir.join(&file.path);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if digest64(&bytes) != file.digest {
                return Err(CliError::config(format!("{} does not match its manifest digest", file.path)));
            }
        }
        Ok(())
    }
}
