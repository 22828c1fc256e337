//! Run manifests written next to every command output.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(bytes)) }
    }
}

/// Everything needed to repeat a run. `reproducibility_hash` covers the
/// command, parameters, seeds, version and file contents, but neither the
/// paths nor the wall time.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub tool_version: String,
    pub wall_time_ms: u128,
    pub reproducibility_hash: String,
}

#[derive(Serialize)]
struct Hashed<'a> {
    command: &'a str,
    params: &'a serde_json::Value,
    seeds: &'a [u64],
    inputs: Vec<&'a str>,
    outputs: Vec<&'a str>,
    tool_version: &'a str,
}

impl RunManifest {
    pub fn new(
        command: &str,
        params: serde_json::Value,
        seeds: Vec<u64>,
        inputs: Vec<FileRecord>,
        outputs: Vec<FileRecord>,
        wall_time: Duration,
    ) -> Self {
        let hashed = Hashed {
            command,
            params: &params,
            seeds: &seeds,
            inputs: inputs.iter().map(|f| f.sha256.as_str()).collect(),
            outputs: outputs.iter().map(|f| f.sha256.as_str()).collect(),
            tool_version: TOOL_VERSION,
        };
        let digest = Sha256::digest(serde_json::to_vec(&hashed).expect("plain data"));
        Self {
            command: command.to_string(),
            reproducibility_hash: hex::encode(digest),
            params,
            seeds,
            inputs,
            outputs,
            tool_version: TOOL_VERSION.to_string(),
            wall_time_ms: wall_time.as_millis(),
        }
    }
}

/// `<output>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
