use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::hypergeom::random_baseline;
use super::metrics::{precision_at_k, rank_at_k, LabeledQueryResult};
use crate::error::{DasError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub rank_at_k: f64,
    pub precision_at_k: f64,
    /// Chance Rank@k, computed per query from its (N, m) and averaged.
    pub random_rank_at_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub system: String,
    pub num_queries: usize,
    pub rows: Vec<MetricRow>,
    /// 1 - Rank@k at the largest k.
    pub miss_rate: f64,
    pub random_miss_rate: f64,
    pub config: serde_json::Value,
}

/// Mean chance Rank@k over queries. A cutoff beyond a query's pool is clamped.
pub fn mean_random_baseline(results: &[LabeledQueryResult], k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(DasError::EmptyResults);
    }
    let mut total = 0.0;
    for r in results {
        let n = r.pool_size as u64;
        let k = (k as u64).min(n);
        total += if k == 0 {
            0.0
        } else {
            random_baseline(n, r.same_author_count as u64, k)?
        };
    }
    Ok(total / results.len() as f64)
}

impl EvaluationReport {
    pub fn build(
        system: impl Into<String>,
        results: &[LabeledQueryResult],
        k_list: &[usize],
        config: serde_json::Value,
    ) -> Result<Self> {
        let mut ks = k_list.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let Some(&k_max) = ks.last() else {
            return Err(DasError::Domain("k list is empty".into()));
        };
        let rows = ks
            .iter()
            .map(|&k| {
                Ok(MetricRow {
                    k,
                    rank_at_k: rank_at_k(results, k)?,
                    precision_at_k: precision_at_k(results, k)?,
                    random_rank_at_k: mean_random_baseline(results, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_row = rows.iter().find(|r| r.k == k_max).expect("k_max row");
        Ok(EvaluationReport {
            system: system.into(),
            num_queries: results.len(),
            miss_rate: 1.0 - max_row.rank_at_k,
            random_miss_rate: 1.0 - max_row.random_rank_at_k,
            rows,
            config,
        })
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Aligned plain-text table: system row, chance row, precision row.
    pub fn render_table(&self) -> String {
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        let label_width = self.system.len().max("Precision".len()) + 2;
        let mut header = vec![String::new()];
        header.extend(self.rows.iter().map(|r| format!("Rank@{}", r.k)));
        header.push("Miss".into());

        let mut system = vec![self.system.clone()];
        system.extend(self.rows.iter().map(|r| pct(r.rank_at_k)));
        system.push(pct(self.miss_rate));

        let mut random = vec!["Random".to_string()];
        random.extend(self.rows.iter().map(|r| pct(r.random_rank_at_k)));
        random.push(pct(self.random_miss_rate));

        let mut precision = vec!["Precision".to_string()];
        precision.extend(self.rows.iter().map(|r| pct(r.precision_at_k)));
        precision.push(String::new());

        let col = header
            .iter()
            .chain(&system)
            .chain(&random)
            .skip(1)
            .map(String::len)
            .max()
            .unwrap_or(0)
            + 2;
        let mut out = String::new();
        for row in [&header, &system, &random, &precision] {
            let mut line = format!("{:<label_width$}", row[0]);
            for cell in &row[1..] {
                let _ = write!(line, "{cell:>col$}");
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        let _ = writeln!(out, "({} queries)", self.num_queries);
        out
    }

    /// Plot-ready series: one line per cutoff.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,rank_at_k,precision_at_k,random_rank_at_k\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.k, r.rank_at_k, r.precision_at_k, r.random_rank_at_k
            );
        }
        out
    }
}
