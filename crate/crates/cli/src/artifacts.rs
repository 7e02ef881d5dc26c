//! Atomic artifact writes and run manifests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Full argument vector, enough to replay the run.
    pub args: Vec<String>,
    pub config_path: String,
    pub config_sha256: String,
    pub degrees: BTreeMap<String, u32>,
    pub solver: serde_json::Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<OutputFile>,
    /// Seconds; the only field that changes between replays.
    pub wall_times: BTreeMap<String, f64>,
}

/// Collects files and writes them with the manifest once the command has
/// succeeded. Nothing reaches `dir` before [`Artifacts::commit`].
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    /// Writes every file (temp file + rename), then the manifest.
    pub fn commit(self, mut manifest: RunManifest) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            written.push(write_atomic(&self.dir.join(name), bytes)?);
            manifest.outputs.push(OutputFile {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let name = format!("manifest_{}.json", manifest.command);
        written.push(write_atomic(&self.dir.join(name), text.as_bytes())?);
        Ok(written)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    // tempfiles are created 0600; artifacts are meant to be shared
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(path.to_path_buf())
}
