use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock, RwLock};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::EmbeddingRecord;
use crate::corpus::Document;
use crate::error::{DasError, Result};

/// Anything that turns a batch of texts into fixed-dimension vectors.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifies provider and model version; part of every cache key.
    fn tag(&self) -> &str;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

/// Offline embedder: signed feature hashing of character trigram counts.
///
/// Deterministic across runs and platforms for a given `(dim, seed)`.
#[derive(Clone, Debug)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    tag: String,
}

impl MockEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        MockEmbedder {
            dim,
            seed,
            tag: format!("mock-trigram/d{dim}/s{seed}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut padded = String::with_capacity(text.len() + 2);
        padded.push(' ');
        for word in text.split_whitespace() {
            padded.extend(word.chars().flat_map(char::to_lowercase));
            padded.push(' ');
        }
        let chars: Vec<char> = padded.chars().collect();
        let mut v = vec![0f32; self.dim];
        let mut buf = [0u8; 12];
        for gram in chars.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = xxh3_64_with_seed(&buf[..len], self.seed);
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        v
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(Self::DEFAULT_DIM, 0)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Remote embedding endpoint. Sends `{"model": .., "input": [..]}` and accepts
/// either a bare array of vectors or an OpenAI-style `{"data": [{"embedding": ..}]}`.
#[derive(Clone, Debug)]
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    auth_env: Option<String>,
    timeout: Duration,
    tag: String,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        HttpEmbedder {
            endpoint: endpoint.into(),
            tag: format!("http/{model}"),
            model,
            auth_env: None,
            timeout: Duration::from_secs(60),
        }
    }

    /// Name of the environment variable holding a bearer token.
    pub fn with_auth_env(mut self, var: impl Into<String>) -> Self {
        self.auth_env = Some(var.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingResponse {
    Bare(Vec<Vec<f32>>),
    Wrapped { embeddings: Vec<Vec<f32>> },
    OpenAi { data: Vec<EmbeddingDatum> },
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.post(&self.endpoint);
        if let Some(var) = &self.auth_env {
            let token = std::env::var(var).map_err(|_| {
                DasError::Provider(format!("environment variable {var} is not set"))
            })?;
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let resp: EmbeddingResponse = req
            .send_json(body)
            .map_err(|e| DasError::Provider(format!("embedding request failed: {e}")))?
            .into_json()
            .map_err(|e| DasError::Provider(format!("bad embedding response: {e}")))?;
        Ok(match resp {
            EmbeddingResponse::Bare(v) => v,
            EmbeddingResponse::Wrapped { embeddings } => embeddings,
            EmbeddingResponse::OpenAi { data } => data.into_iter().map(|d| d.embedding).collect(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbedOptions {
    pub batch_size: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    /// Meta fields prepended (in this order) to the document text before embedding.
    #[serde(default)]
    pub prepend_meta: Vec<String>,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            batch_size: 64,
            max_attempts: 3,
            backoff_ms: 200,
            prepend_meta: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderStats {
    pub provider_calls: usize,
    pub texts_embedded: usize,
    pub cache_hits: usize,
}

/// Batching, retrying, caching front end over an [`EmbeddingProvider`].
pub struct Embedder<'p> {
    provider: &'p dyn EmbeddingProvider,
    options: EmbedOptions,
    cache: RwLock<HashMap<[u8; 32], Arc<Vec<f32>>>>,
    dim: OnceLock<usize>,
    provider_calls: AtomicUsize,
    texts_embedded: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl<'p> Embedder<'p> {
    pub fn new(provider: &'p dyn EmbeddingProvider, options: EmbedOptions) -> Self {
        Embedder {
            provider,
            options,
            cache: RwLock::new(HashMap::new()),
            dim: OnceLock::new(),
            provider_calls: AtomicUsize::new(0),
            texts_embedded: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn provider_tag(&self) -> &str {
        self.provider.tag()
    }

    pub fn options(&self) -> &EmbedOptions {
        &self.options
    }

    pub fn stats(&self) -> EmbedderStats {
        EmbedderStats {
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
            texts_embedded: self.texts_embedded.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// The text actually sent to the provider for `doc`.
    pub fn document_text<'d>(&self, doc: &'d Document) -> Cow<'d, str> {
        if self.options.prepend_meta.is_empty() {
            return Cow::Borrowed(&doc.text);
        }
        let mut out = String::new();
        for key in &self.options.prepend_meta {
            if let Some(v) = doc.meta.get(key) {
                out.push_str(v);
                out.push('\n');
            }
        }
        out.push_str(&doc.text);
        Cow::Owned(out)
    }

    fn key(&self, text: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.provider.tag().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    fn call_with_retry(&self, batch: &[&str]) -> Result<Vec<Vec<f32>>> {
        let attempts = self.options.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self
                    .options
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            match self.provider.embed_batch(batch) {
                Ok(vectors) if vectors.len() == batch.len() => return Ok(vectors),
                Ok(vectors) => {
                    last = Some(DasError::Provider(format!(
                        "provider returned {} vectors for {} texts",
                        vectors.len(),
                        batch.len()
                    )))
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        let expected = *self.dim.get_or_init(|| v.len());
        if v.len() != expected || expected == 0 {
            return Err(DasError::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Embeds `texts`, one vector per input in input order. Repeated texts
    /// are served from the cache.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Arc<Vec<f32>>>> {
        let keys: Vec<[u8; 32]> = texts.iter().map(|t| self.key(t)).collect();

        let mut missing: Vec<(usize, [u8; 32])> = Vec::new();
        {
            let cache = self.cache.read().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            for (i, key) in keys.iter().enumerate() {
                if cache.contains_key(key) || !seen.insert(*key) {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                } else {
                    missing.push((i, *key));
                }
            }
        }

        if !missing.is_empty() {
            let batch_size = self.options.batch_size.max(1);
            let fetched: Vec<Vec<([u8; 32], Vec<f32>)>> = missing
                .par_chunks(batch_size)
                .map(|chunk| {
                    let batch: Vec<&str> = chunk.iter().map(|&(i, _)| texts[i]).collect();
                    let vectors = self.call_with_retry(&batch)?;
                    self.texts_embedded
                        .fetch_add(batch.len(), Ordering::Relaxed);
                    Ok(chunk.iter().map(|&(_, k)| k).zip(vectors).collect())
                })
                .collect::<Result<_>>()?;

            let mut cache = self.cache.write().expect("embedding cache poisoned");
            for (key, vector) in fetched.into_iter().flatten() {
                self.check_dim(&vector)?;
                if vector.iter().any(|x| !x.is_finite()) {
                    let idx = missing.iter().find(|(_, k)| *k == key).map(|(i, _)| *i);
                    let shown = idx
                        .map(|i| texts[i].chars().take(40).collect())
                        .unwrap_or_default();
                    return Err(DasError::NonFinite(shown));
                }
                cache.entry(key).or_insert_with(|| Arc::new(vector));
            }
        }

        let cache = self.cache.read().expect("embedding cache poisoned");
        Ok(keys.iter().map(|k| Arc::clone(&cache[k])).collect())
    }

    pub fn embed_documents(&self, docs: &[&Document]) -> Result<Vec<EmbeddingRecord>> {
        let texts: Vec<Cow<'_, str>> = docs.iter().map(|d| self.document_text(d)).collect();
        let refs: Vec<&str> = texts.iter().map(|t| t.as_ref()).collect();
        let vectors = self.embed_texts(&refs)?;
        Ok(docs
            .iter()
            .zip(vectors)
            .map(|(doc, v)| EmbeddingRecord {
                doc_id: doc.id.clone(),
                vector: v.as_ref().clone(),
                provider_tag: self.provider.tag().to_owned(),
            })
            .collect())
    }
}
