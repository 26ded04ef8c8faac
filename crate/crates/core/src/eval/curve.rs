use std::collections::{BTreeSet, HashMap};

use crate::error::{DasError, Result};
use crate::filter::FilteredPool;
use crate::tournament::VerdictRecord;

/// Mean 1-based position of the relevant pool members when the pool is
/// ordered by cumulative score after each trial (ties as in the final
/// shortlist: coarse similarity, then id). One value per trial; empty when
/// the pool holds no relevant document.
pub fn mean_rank_by_trial(
    pool: &FilteredPool,
    verdicts: &[VerdictRecord],
    relevant_ids: &BTreeSet<String>,
) -> Result<Vec<f64>> {
    let relevant: Vec<&str> = pool.ids().filter(|id| relevant_ids.contains(*id)).collect();
    if relevant.is_empty() {
        return Ok(Vec::new());
    }
    let trials = verdicts.iter().map(|v| v.trial).max().unwrap_or(0);
    let mut scores: HashMap<&str, f64> = pool.ids().map(|id| (id, 0.0)).collect();
    let mut curve = Vec::with_capacity(trials as usize);
    for trial in 1..=trials {
        for v in verdicts.iter().filter(|v| v.trial == trial) {
            for a in &v.awards {
                *scores
                    .get_mut(a.doc_id.as_str())
                    .ok_or_else(|| DasError::UnknownId(a.doc_id.clone()))? += a.points;
            }
        }
        let mut order: Vec<(&str, f64)> = pool
            .candidates
            .iter()
            .map(|c| (c.doc_id.as_str(), c.similarity))
            .collect();
        order.sort_by(|a, b| {
            scores[b.0]
                .total_cmp(&scores[a.0])
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| a.0.cmp(b.0))
        });
        let total: usize = order
            .iter()
            .enumerate()
            .filter(|(_, (id, _))| relevant_ids.contains(*id))
            .map(|(pos, _)| pos + 1)
            .sum();
        curve.push(total as f64 / relevant.len() as f64);
    }
    Ok(curve)
}
