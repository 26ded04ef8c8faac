//! Coarse filtering: shrink the candidate universe to the top-K documents by
//! cosine similarity of style embeddings.

mod index;
mod provider;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{DasError, Result};

pub use index::EmbeddingIndex;
pub use provider::{
    EmbedOptions, Embedder, EmbedderStats, EmbeddingProvider, HttpEmbedder, MockEmbedder,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub doc_id: String,
    pub vector: Vec<f32>,
    pub provider_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub doc_id: String,
    pub similarity: f64,
}

/// Top-K candidates for one query, sorted by descending similarity with ties
/// broken by ascending doc id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredPool {
    pub query_id: String,
    pub k: usize,
    pub candidates: Vec<ScoredCandidate>,
}

impl FilteredPool {
    /// Wraps an explicit candidate list (no filtering stage). Similarities are zero.
    pub fn unfiltered<'a>(query_id: &str, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let candidates: Vec<ScoredCandidate> = ids
            .into_iter()
            .map(|id| ScoredCandidate {
                doc_id: id.to_owned(),
                similarity: 0.0,
            })
            .collect();
        FilteredPool {
            query_id: query_id.to_owned(),
            k: candidates.len(),
            candidates,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.doc_id.as_str())
    }

    pub fn similarity_map(&self) -> HashMap<&str, f64> {
        self.candidates
            .iter()
            .map(|c| (c.doc_id.as_str(), c.similarity))
            .collect()
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(crate::corpus::sha256_hex(&self.to_json_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_bytes()?).map_err(|e| DasError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DasError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms. Shared by `cosine` and
/// the index so both produce bit-identical scores.
pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    // +0.0 folds a negative zero into positive zero for stable ordering
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0) + 0.0
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DasError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(DasError::ZeroVector);
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}

pub(crate) fn pool_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Keeps the best `k` candidates in pool order without sorting the whole list.
pub fn select_top_k(mut scored: Vec<ScoredCandidate>, k: usize) -> Vec<ScoredCandidate> {
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, pool_order);
        scored.truncate(k);
    }
    scored.sort_by(pool_order);
    scored
}

/// Embeds the target and the universe, scores every candidate and keeps the top `k`.
pub fn top_k_filter(
    query: &Query,
    universe: &[&Document],
    k: usize,
    embedder: &Embedder<'_>,
) -> Result<FilteredPool> {
    if k == 0 {
        return Err(DasError::Config(
            "coarse pool size K must be at least 1".into(),
        ));
    }
    let universe: Vec<&Document> = universe
        .iter()
        .copied()
        .filter(|d| !query.is_excluded(&d.id))
        .collect();
    if universe.is_empty() {
        return Err(DasError::EmptyUniverse {
            excluded: query.excluded_ids().len(),
        });
    }

    let target = embedder.embed_documents(&[query.target()])?.remove(0);
    let target_norm = norm(&target.vector);
    if target_norm == 0.0 {
        return Err(DasError::ZeroVector);
    }
    let records = embedder.embed_documents(&universe)?;
    let scored = records
        .iter()
        .map(|r| {
            let n = norm(&r.vector);
            if n == 0.0 {
                return Err(DasError::ZeroVector);
            }
            Ok(ScoredCandidate {
                doc_id: r.doc_id.clone(),
                similarity: cosine_from_parts(dot(&target.vector, &r.vector), target_norm, n),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FilteredPool {
        query_id: query.id().to_owned(),
        k,
        candidates: select_top_k(scored, k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_known_values() {
        let v = [0.3f32, -1.5, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let c = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974631846).abs() < 1e-9, "{c}");
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(DasError::ZeroVector)
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(DasError::DimensionMismatch {
                expected: 1,
                actual: 2
            })
        ));
    }

    #[test]
    fn negative_zero_is_folded() {
        let c = cosine(&[1.0, 0.0], &[-0.0, 1.0]).unwrap();
        assert_eq!(c.to_bits(), 0.0f64.to_bits());
    }

    fn sc(id: &str, s: f64) -> ScoredCandidate {
        ScoredCandidate {
            doc_id: id.into(),
            similarity: s,
        }
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let picked = select_top_k(
            vec![sc("c", 0.5), sc("a", 0.5), sc("b", 0.9), sc("d", 0.1)],
            3,
        );
        let ids: Vec<_> = picked.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn k_larger_than_input_keeps_everything() {
        let picked = select_top_k(vec![sc("x", 0.1), sc("y", 0.2)], 10);
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0].doc_id, "y");
    }
}
