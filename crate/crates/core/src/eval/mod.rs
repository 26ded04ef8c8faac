//! Shortlist metrics, the hypergeometric chance baseline, and labeled sweeps.

mod benchmark;
mod curve;
mod hypergeom;
mod metrics;
mod report;

pub use benchmark::{run_benchmark, sample_queries, BenchmarkOutcome, Pipeline, QueryRun, Setting};
pub use curve::mean_rank_by_trial;
pub use hypergeom::{hypergeom_pmf, ln_binomial, random_baseline};
pub use metrics::{miss_rate, precision_at_k, rank_at_k, LabeledQueryResult};
pub use report::{mean_random_baseline, EvaluationReport, MetricRow};
