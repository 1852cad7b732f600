use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command invocation, written once the command finishes.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Resolved configuration as `key = value` lines.
    pub config: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<Artifact>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, total))
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, started_unix_ms: u128) -> Self {
        Self {
            command: command.to_string(),
            args,
            seed: None,
            config: String::new(),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
            artifacts: Vec::new(),
        }
    }

    /// Checksums `paths` and writes the manifest into `dir` through a
    /// temporary file and a rename.
    pub fn finish(mut self, dir: &Path, paths: &[PathBuf]) -> Result<PathBuf, CliError> {
        for p in paths {
            let (sha256, bytes) = sha256_file(p).map_err(|e| CliError::io(p, e))?;
            self.artifacts.push(Artifact {
                path: p.clone(),
                sha256,
                bytes,
            });
        }
        self.finished_unix_ms = now_ms();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(&self).map_err(|e| CliError::Usage(e.to_string()))?;
        fs::write(&tmp, json + "\n").map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
