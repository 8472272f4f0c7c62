//! Run manifests: what was run, on which inputs, producing which files.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const RUN_MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Files written under the output directory, relative to it.
    pub artifacts: Vec<FileDigest>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub status: Outcome,
    pub exit_code: u8,
    pub error: Option<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Tracks inputs read and files written by one command.
#[derive(Debug)]
pub struct Ledger {
    pub out_dir: PathBuf,
    pub command: &'static str,
    pub started_at: u64,
    inputs: Vec<FileDigest>,
    artifacts: Vec<String>,
}

impl Ledger {
    pub fn create(out_dir: &Path, command: &'static str) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(CliError::io(format!("creating output directory {}", out_dir.display())))?;
        Ok(Ledger { out_dir: out_dir.to_path_buf(), command, started_at: unix_now(), inputs: Vec::new(), artifacts: Vec::new() })
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path).map_err(|e| CliError::Data {
            context: format!("hashing {}", path.display()),
            source: e.into(),
        })?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Path of an artifact inside the output directory; registers it.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.out_dir.join(name)
    }

    pub fn manifest_name(&self) -> String {
        format!("{}_manifest.json", self.command)
    }

    /// Writes the manifest, listing every registered artifact that exists.
    pub fn finish(self, config: &impl Serialize, error: Option<&CliError>) -> Result<RunManifest, CliError> {
        let path = self.out_dir.join(self.manifest_name());
        let mut artifacts = Vec::new();
        for name in &self.artifacts {
            let path = self.out_dir.join(name);
            if path.exists() {
                let sha256 = sha256_file(&path).map_err(CliError::io(format!("hashing {}", path.display())))?;
                artifacts.push(FileDigest { path: name.clone(), sha256 });
            }
        }
        let manifest = RunManifest {
            schema_version: RUN_MANIFEST_SCHEMA_VERSION,
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: self.command.to_string(),
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime {
                context: "serialising config".into(),
                source: e.into(),
            })?,
            inputs: self.inputs,
            artifacts,
            started_at: self.started_at,
            finished_at: unix_now(),
            status: if error.is_none() { Outcome::Ok } else { Outcome::Failed },
            exit_code: error.map_or(crate::error::EXIT_OK, CliError::exit_code),
            error: error.map(|e| e.to_string()),
        };
        let write = || -> io::Result<()> {
            let mut out = BufWriter::new(File::create(&path)?);
            serde_json::to_writer_pretty(&mut out, &manifest)?;
            writeln!(out)?;
            out.flush()
        };
        write().map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn ledger_lists_existing_artifacts_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut ledger = Ledger::create(dir.path(), "train").unwrap();
        std::fs::write(ledger.artifact("a.txt"), b"x").unwrap();
        let _ = ledger.artifact("never-written.txt");
        let m = ledger.finish(&serde_json::json!({"k": 1}), None).unwrap();
        assert_eq!(m.artifacts.len(), 1);
        assert_eq!(m.artifacts[0].path, "a.txt");
        assert_eq!(m.status, Outcome::Ok);
        assert!(dir.path().join("train_manifest.json").exists());
    }
}
