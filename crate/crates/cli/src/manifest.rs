//! Run manifests: what was run, on which inputs, and a digest identifying the run.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    /// SHA-256 over the command, its normalized arguments and the bytes of every input file.
    pub config_digest: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a run. `args` should list every option that affects the output.
pub fn digest(
    command: &str,
    args: &[(&str, String)],
    inputs: &[&Path],
) -> Result<String, CliError> {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    let mut sorted: Vec<_> = args.to_vec();
    sorted.sort();
    for (k, v) in sorted {
        h.update(k.as_bytes());
        h.update(*b"=");
        h.update(v.as_bytes());
        h.update([0]);
    }
    for p in inputs {
        let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: &[(&str, String)],
        inputs: &[&Path],
        seed: u64,
    ) -> Result<Self, CliError> {
        Ok(Self {
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config_digest: digest(command, args, inputs)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
