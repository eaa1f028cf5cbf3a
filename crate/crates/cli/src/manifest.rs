use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Content hash of one input file.
#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    /// SHA-256 of `blob <len>\0<bytes>`, the way git hashes blobs.
    pub blob_sha256: String,
}

/// Record written beside the outputs of every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    /// Hash over the input hashes, in order.
    pub content_hash: String,
    pub gcqrf_version: String,
    /// Seconds since the Unix epoch; the only field that varies between identical runs.
    pub timestamp: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            args,
            config_path: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            content_hash: String::new(),
            gcqrf_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: 0,
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            blob_sha256: blob_hash(&bytes),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Path of the manifest for a primary output file.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write(mut self, primary_output: &Path) -> std::io::Result<PathBuf> {
        let mut h = Sha256::new();
        for i in &self.inputs {
            h.update(i.blob_sha256.as_bytes());
        }
        self.content_hash = hex(&h.finalize());
        self.timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let path = Self::path_for(primary_output);
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
