//! Per-run provenance: everything needed to reproduce a shortlist.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::llm::Usage;
use crate::tournament::TsaOutcome;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Full run configuration, verbatim.
    pub config: serde_json::Value,
    pub corpus_digest: String,
    pub query_id: Option<String>,
    pub pool_digest: Option<String>,
    pub embedding_provider: Option<String>,
    pub model: Option<String>,
    pub seed: u64,
    pub trajectories: Vec<Vec<usize>>,
    pub calls_per_trial: Vec<usize>,
    pub usage: Usage,
    pub manifest_ref: Option<String>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(
        command: impl Into<String>,
        config: serde_json::Value,
        corpus_digest: impl Into<String>,
        seed: u64,
    ) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.into(),
            config,
            corpus_digest: corpus_digest.into(),
            query_id: None,
            pool_digest: None,
            embedding_provider: None,
            model: None,
            seed,
            trajectories: Vec::new(),
            calls_per_trial: Vec::new(),
            usage: Usage::default(),
            manifest_ref: None,
            wall_time_secs: 0.0,
        }
    }

    pub fn record_outcome(&mut self, outcome: &TsaOutcome) {
        self.query_id = Some(outcome.result.query_id.clone());
        self.trajectories = outcome.trajectories.clone();
        self.calls_per_trial = outcome.calls_per_trial();
        self.usage = outcome.usage;
        self.manifest_ref = Some(outcome.result.manifest_ref.clone());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| DasError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DasError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
