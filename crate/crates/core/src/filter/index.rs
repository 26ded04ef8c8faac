use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cosine_from_parts, dot, norm, select_top_k, Embedder, FilteredPool, ScoredCandidate};
use crate::corpus::{sha256_hex, Corpus, Document, Query};
use crate::error::{DasError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    provider_tag: String,
    source_digest: String,
    dim: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Row {
    doc_id: String,
    provider_tag: String,
    dim: usize,
    vector: Vec<f32>,
}

/// Embeddings for a whole corpus, persisted per `(provider_tag, source_digest)`.
///
/// Raw vectors are kept alongside their norms; scores go through the same
/// arithmetic as [`super::cosine`].
#[derive(Clone, Debug)]
pub struct EmbeddingIndex {
    provider_tag: String,
    source_digest: String,
    dim: usize,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
}

impl EmbeddingIndex {
    pub fn build(corpus: &Corpus, embedder: &Embedder<'_>) -> Result<Self> {
        let docs: Vec<&Document> = corpus.iter().collect();
        let records = embedder.embed_documents(&docs)?;
        let dim = records.first().map(|r| r.vector.len()).unwrap_or(0);
        let mut index = EmbeddingIndex::empty(embedder.provider_tag(), corpus.source_digest(), dim);
        for r in records {
            index.push(r.doc_id, r.vector)?;
        }
        Ok(index)
    }

    fn empty(provider_tag: &str, source_digest: &str, dim: usize) -> Self {
        EmbeddingIndex {
            provider_tag: provider_tag.to_owned(),
            source_digest: source_digest.to_owned(),
            dim,
            ids: Vec::new(),
            positions: HashMap::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
        }
    }

    fn push(&mut self, id: String, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(DasError::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(DasError::NonFinite(id));
        }
        self.norms.push(norm(&vector));
        self.vectors.extend_from_slice(&vector);
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        Ok(())
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions
            .get(id)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    fn slot(&self, id: &str) -> Result<usize> {
        self.positions
            .get(id)
            .copied()
            .ok_or_else(|| DasError::UnknownId(id.to_owned()))
    }

    /// Cache file name for a provider and corpus digest.
    pub fn cache_path(dir: &Path, provider_tag: &str, source_digest: &str) -> PathBuf {
        let tag = &sha256_hex(provider_tag.as_bytes())[..16];
        let digest = &source_digest[..source_digest.len().min(16)];
        dir.join(format!("embeddings-{tag}-{digest}.jsonl"))
    }

    /// Loads the cached index for this corpus and provider, building and
    /// persisting it on a miss. The flag reports whether a build happened.
    pub fn load_or_build(
        dir: &Path,
        corpus: &Corpus,
        embedder: &Embedder<'_>,
    ) -> Result<(Self, bool)> {
        let path = Self::cache_path(dir, embedder.provider_tag(), corpus.source_digest());
        if path.exists() {
            let index = Self::load(&path)?;
            if index.provider_tag == embedder.provider_tag()
                && index.source_digest == corpus.source_digest()
                && index.len() == corpus.len()
            {
                return Ok((index, false));
            }
        }
        let index = Self::build(corpus, embedder)?;
        std::fs::create_dir_all(dir).map_err(|e| DasError::io(dir, e))?;
        index.save(&path)?;
        Ok((index, true))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| DasError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| DasError::io(path, e);
        let header = Header {
            provider_tag: self.provider_tag.clone(),
            source_digest: self.source_digest.clone(),
            dim: self.dim,
            count: self.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for (i, id) in self.ids.iter().enumerate() {
            let row = Row {
                doc_id: id.clone(),
                provider_tag: self.provider_tag.clone(),
                dim: self.dim,
                vector: self.vectors[i * self.dim..(i + 1) * self.dim].to_vec(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| DasError::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, message: String| DasError::Parse { line, message };

        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let first = first.map_err(|e| DasError::io(path, e))?;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        let mut index =
            EmbeddingIndex::empty(&header.provider_tag, &header.source_digest, header.dim);
        for (i, line) in lines {
            let line = line.map_err(|e| DasError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row =
                serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            if row.provider_tag != header.provider_tag || row.dim != header.dim {
                return Err(parse_err(i + 1, "row does not match index header".into()));
            }
            index.push(row.doc_id, row.vector)?;
        }
        if index.len() != header.count {
            return Err(parse_err(
                index.len() + 1,
                format!("expected {} rows, found {}", header.count, index.len()),
            ));
        }
        Ok(index)
    }

    /// Top-`k` members of `universe` by similarity to the query target.
    /// Excluded ids are dropped even if the caller passes them in.
    pub fn top_k(&self, query: &Query, universe: &[&Document], k: usize) -> Result<FilteredPool> {
        if k == 0 {
            return Err(DasError::Config(
                "coarse pool size K must be at least 1".into(),
            ));
        }
        let t = self.slot(query.id())?;
        let target = &self.vectors[t * self.dim..(t + 1) * self.dim];
        let target_norm = self.norms[t];
        if target_norm == 0.0 {
            return Err(DasError::ZeroVector);
        }

        let mut scored = Vec::with_capacity(universe.len());
        for doc in universe.iter().filter(|d| !query.is_excluded(&d.id)) {
            let j = self.slot(&doc.id)?;
            if self.norms[j] == 0.0 {
                return Err(DasError::ZeroVector);
            }
            let v = &self.vectors[j * self.dim..(j + 1) * self.dim];
            scored.push(ScoredCandidate {
                doc_id: doc.id.clone(),
                similarity: cosine_from_parts(dot(target, v), target_norm, self.norms[j]),
            });
        }
        if scored.is_empty() {
            return Err(DasError::EmptyUniverse {
                excluded: query.excluded_ids().len(),
            });
        }
        Ok(FilteredPool {
            query_id: query.id().to_owned(),
            k,
            candidates: select_top_k(scored, k),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::candidate_universe;
    use crate::filter::{top_k_filter, EmbedOptions, MockEmbedder};

    fn corpus() -> Corpus {
        Corpus::from_documents(
            [
                "alpha beta",
                "alpha gamma",
                "delta epsilon",
                "beta beta alpha",
                "zeta",
            ]
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect(),
        )
        .unwrap()
    }

    #[test]
    fn index_matches_direct_filter() {
        let corpus = corpus();
        let mock = MockEmbedder::new(64, 5);
        let embedder = Embedder::new(&mock, EmbedOptions::default());
        let index = EmbeddingIndex::build(&corpus, &embedder).unwrap();
        let q = Query::for_id(&corpus, "d0").unwrap();
        let universe = candidate_universe(&corpus, &q).unwrap();
        let a = index.top_k(&q, &universe, 3).unwrap();
        let b = top_k_filter(&q, &universe, 3, &embedder).unwrap();
        assert_eq!(a, b);
        assert!(a.ids().all(|id| id != "d0"));
    }

    #[test]
    fn save_load_round_trip_and_cache_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = corpus();
        let mock = MockEmbedder::new(32, 9);
        let embedder = Embedder::new(&mock, EmbedOptions::default());
        let (built, fresh) = EmbeddingIndex::load_or_build(dir.path(), &corpus, &embedder).unwrap();
        assert!(fresh);

        let cold = Embedder::new(&mock, EmbedOptions::default());
        let (loaded, fresh) = EmbeddingIndex::load_or_build(dir.path(), &corpus, &cold).unwrap();
        assert!(!fresh);
        assert_eq!(cold.stats().provider_calls, 0);
        for doc in corpus.iter() {
            assert_eq!(built.vector(&doc.id), loaded.vector(&doc.id));
        }
    }

    #[test]
    fn zero_k_is_rejected() {
        let corpus = corpus();
        let mock = MockEmbedder::new(8, 0);
        let index =
            EmbeddingIndex::build(&corpus, &Embedder::new(&mock, EmbedOptions::default())).unwrap();
        let q = Query::for_id(&corpus, "d1").unwrap();
        let universe = candidate_universe(&corpus, &q).unwrap();
        assert!(matches!(
            index.top_k(&q, &universe, 0),
            Err(DasError::Config(_))
        ));
    }
}
