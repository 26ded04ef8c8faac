use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use das_core::filter::EmbedOptions;
use das_core::llm::{ChatSettings, Domain, RankerConfig};
use das_core::tournament::TsaConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Offline character-trigram hashing embedder.
    Mock,
    /// JSON embedding endpoint.
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    /// Label-reading stand-in judge for offline runs.
    Oracle,
    /// OpenAI-compatible chat endpoint.
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub batch_size: usize,
    pub max_attempts: u32,
    pub prepend_meta: Vec<String>,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            provider: EmbeddingKind::Mock,
            dim: das_core::filter::MockEmbedder::DEFAULT_DIM,
            seed: 0,
            endpoint: None,
            model: None,
            auth_env: Some("DAS_EMBED_API_KEY".into()),
            batch_size: 64,
            max_attempts: 3,
            prepend_meta: Vec::new(),
        }
    }
}

impl EmbeddingSettings {
    pub fn options(&self) -> EmbedOptions {
        EmbedOptions {
            batch_size: self.batch_size,
            max_attempts: self.max_attempts,
            prepend_meta: self.prepend_meta.clone(),
            ..EmbedOptions::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub client: ClientKind,
    pub oracle_noise: f64,
    pub oracle_seed: u64,
    pub chat: ChatSettings,
    pub domain: Domain,
    pub template: Option<PathBuf>,
    pub ranker: RankerConfig,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            client: ClientKind::Oracle,
            oracle_noise: 0.0,
            oracle_seed: 0,
            chat: ChatSettings::default(),
            domain: Domain::Reviews,
            template: None,
            ranker: RankerConfig::default(),
        }
    }
}

/// Everything a run depends on. Echoed verbatim into every manifest, so it
/// must never hold credentials.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub max_chars: usize,
    pub embedding: EmbeddingSettings,
    pub llm: LlmSettings,
    pub tsa: TsaConfig,
    /// Coarse pool size.
    pub top_k: usize,
    pub k_list: Vec<usize>,
    pub cache_dir: PathBuf,
    pub runs_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            max_chars: das_core::corpus::DEFAULT_MAX_CHARS,
            embedding: EmbeddingSettings::default(),
            llm: LlmSettings::default(),
            tsa: TsaConfig::default(),
            top_k: 2000,
            k_list: vec![5, 10, 15, 20],
            cache_dir: PathBuf::from(".das-cache"),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
