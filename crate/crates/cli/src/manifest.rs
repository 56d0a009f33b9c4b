//! Run manifests: what was run, on which inputs, and digests of what it wrote.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use featsel_core::seeding::content_digest;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub command_line: Vec<String>,
    pub config_path: Option<String>,
    pub config_file_digest: Option<String>,
    /// Digest of the fully resolved settings (file + flags + defaults).
    pub config_digest: String,
    pub resolved_config: serde_json::Value,
    pub seed: Option<u64>,
    pub catalog_digest: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
}

/// Collects inputs and writes outputs, then seals everything in `manifest.json`.
pub struct ArtifactWriter {
    dir: PathBuf,
    manifest: RunManifest,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::internal(format!("{}: {e}", path.display()))
}

pub fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: content_digest(&bytes),
        bytes: bytes.len() as u64,
    })
}

impl ArtifactWriter {
    pub fn create(dir: &Path, subcommand: &str, resolved: serde_json::Value) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let canonical = serde_json::to_vec(&resolved).expect("json value serializes");
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                tool: "featsel".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: subcommand.into(),
                command_line: std::env::args().collect(),
                config_path: None,
                config_file_digest: None,
                config_digest: content_digest(&canonical),
                resolved_config: resolved,
                seed: None,
                catalog_digest: None,
                inputs: Vec::new(),
                started_at: now(),
                finished_at: String::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn config_digest(&self) -> &str {
        &self.manifest.config_digest
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn set_config_file(&mut self, path: &Path) -> Result<(), CliError> {
        let d = digest_file(path)?;
        self.manifest.config_path = Some(d.path);
        self.manifest.config_file_digest = Some(d.sha256);
        Ok(())
    }

    pub fn add_input(&mut self, path: &Path) -> Result<String, CliError> {
        let d = digest_file(path)?;
        let sha = d.sha256.clone();
        self.manifest.inputs.push(d);
        Ok(sha)
    }

    pub fn add_catalog(&mut self, path: &Path) -> Result<(), CliError> {
        let sha = self.add_input(path)?;
        self.manifest.catalog_digest = Some(sha);
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        self.manifest.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: content_digest(contents),
            bytes: contents.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished_at = now();
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(self.manifest)
    }
}
