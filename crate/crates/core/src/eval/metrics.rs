use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{DasError, Result};

/// One query's shortlist with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledQueryResult {
    pub query_id: String,
    pub ranked_ids: Vec<String>,
    pub relevant_ids: BTreeSet<String>,
    /// Candidate universe size N.
    pub pool_size: usize,
    /// Same-author documents in the universe, m = |relevant_ids|.
    pub same_author_count: usize,
}

impl LabeledQueryResult {
    /// Labels a shortlist using the author labels of the candidate universe.
    pub fn from_labels<'a>(
        query: &Query,
        universe: &[&'a Document],
        ranked_ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let target = query.target();
        if target.author.is_none() {
            return Err(DasError::MissingLabel(target.id.clone()));
        }
        let relevant_ids: BTreeSet<String> = universe
            .iter()
            .filter(|d| target.same_author(d))
            .map(|d| d.id.clone())
            .collect();
        Ok(LabeledQueryResult {
            query_id: target.id.clone(),
            ranked_ids: ranked_ids.into_iter().map(str::to_owned).collect(),
            same_author_count: relevant_ids.len(),
            relevant_ids,
            pool_size: universe.len(),
        })
    }

    fn top(&self, k: usize) -> &[String] {
        &self.ranked_ids[..k.min(self.ranked_ids.len())]
    }

    pub fn hits_at(&self, k: usize) -> usize {
        self.top(k)
            .iter()
            .filter(|id| self.relevant_ids.contains(*id))
            .count()
    }
}

fn check(results: &[LabeledQueryResult], k: usize) -> Result<()> {
    if results.is_empty() {
        return Err(DasError::EmptyResults);
    }
    if k == 0 {
        return Err(DasError::Domain("k must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of queries whose top-k holds at least one same-author document.
pub fn rank_at_k(results: &[LabeledQueryResult], k: usize) -> Result<f64> {
    check(results, k)?;
    let hits = results.iter().filter(|r| r.hits_at(k) > 0).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean share of same-author documents within the top-k. Shortlists shorter
/// than k still divide by k.
pub fn precision_at_k(results: &[LabeledQueryResult], k: usize) -> Result<f64> {
    check(results, k)?;
    let total: f64 = results.iter().map(|r| r.hits_at(k) as f64 / k as f64).sum();
    Ok(total / results.len() as f64)
}

pub fn miss_rate(results: &[LabeledQueryResult], k_max: usize) -> Result<f64> {
    Ok(1.0 - rank_at_k(results, k_max)?)
}
