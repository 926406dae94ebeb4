use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: TrainConfig,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_clock_seconds: f64,
    /// SHA-256 over every input file and the resolved config.
    pub input_hash: String,
    pub call_counts: BTreeMap<String, u64>,
}

pub(crate) fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Each file enters as `blob <len>\0<bytes>` after its name, in the given
/// order, followed by the config JSON.
pub(crate) fn hash_inputs(files: &[PathBuf], config: &TrainConfig) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = fs::read(f)?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(name.as_bytes());
        h.update(b"\n");
        h.update(format!("blob {}\0", bytes.len()).as_bytes());
        h.update(&bytes);
    }
    h.update(serde_json::to_vec(config)?);
    Ok(crate::trainer::hex_string(&h.finalize()))
}
