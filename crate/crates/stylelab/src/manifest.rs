//! Run manifest: resolved configuration, its hash, and per-command input
//! and output hashes with timings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stylelab_core::config::RunConfig;

use crate::error::{AppError, AppResult};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    /// File name → sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub commands: BTreeMap<String, CommandRecord>,
}

/// sha256 of the compact JSON form of the resolved configuration.
pub fn config_hash(cfg: &RunConfig) -> AppResult<String> {
    let bytes = serde_json::to_vec(cfg).map_err(|e| AppError::Invalid(format!("config: {e}")))?;
    Ok(io::sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(cfg: &RunConfig) -> AppResult<Self> {
        Ok(Self {
            config_hash: config_hash(cfg)?,
            seed: cfg.seed,
            config: cfg.clone(),
            commands: BTreeMap::new(),
        })
    }

    /// The manifest at `path` if it was written for the same configuration,
    /// otherwise a fresh one.
    pub fn load_or_new(path: &Path, cfg: &RunConfig) -> AppResult<Self> {
        let fresh = Self::new(cfg)?;
        if !path.exists() {
            return Ok(fresh);
        }
        match io::read_json::<RunManifest>(path) {
            Ok(m) if m.config_hash == fresh.config_hash => Ok(m),
            _ => Ok(fresh),
        }
    }
}
