//! Run manifests: one JSON line per invocation, appended to a log file.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    /// `-` for standard output.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub platforms: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<FileDigest>,
    pub exit_code: i32,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest(path: &str, bytes: &[u8]) -> FileDigest {
    FileDigest { path: path.to_string(), sha256: sha256_hex(bytes) }
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            argv,
            inputs: Vec::new(),
            platforms: Vec::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            exit_code: 0,
            timestamp: 0,
        }
    }

    pub fn append_to(mut self, path: &Path) -> std::io::Result<()> {
        self.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut line = serde_json::to_string(&self).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(line.as_bytes())
    }
}
