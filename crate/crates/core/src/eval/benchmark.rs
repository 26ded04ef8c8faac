use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::LabeledQueryResult;
use super::report::EvaluationReport;
use crate::corpus::{candidate_universe, Corpus, Query};
use crate::error::{DasError, Result};
use crate::filter::{EmbeddingIndex, FilteredPool};
use crate::llm::GroupJudge;
use crate::tournament::{AttributionResult, Tournament, TournamentMode, TsaConfig, VerdictRecord};

/// How much of the corpus each query is matched against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Setting {
    /// The whole corpus minus the target.
    InTheWild,
    /// The target author's other documents mixed with the documents of a
    /// fixed number of other authors.
    OneToMany { distractor_authors: usize },
}

fn primary_author(corpus: &Corpus, id: &str) -> Result<String> {
    let doc = corpus.require(id)?;
    doc.author
        .as_ref()
        .and_then(|a| a.names().next())
        .map(str::to_owned)
        .ok_or_else(|| DasError::MissingLabel(id.to_owned()))
}

/// Draws `count` labeled targets that have at least one same-author document
/// elsewhere in the corpus, and scopes each to `setting`.
pub fn sample_queries(
    corpus: &Corpus,
    count: usize,
    setting: Setting,
    seed: u64,
) -> Result<Vec<Query>> {
    let mut by_author: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for doc in corpus.iter() {
        if let Some(label) = &doc.author {
            for name in label.names() {
                by_author.entry(name).or_default().push(&doc.id);
            }
        }
    }
    let mut eligible: Vec<&str> = corpus
        .iter()
        .filter(|d| corpus.iter().any(|o| o.id != d.id && d.same_author(o)))
        .map(|d| d.id.as_str())
        .collect();
    if eligible.len() < count {
        return Err(DasError::Config(format!(
            "{count} queries requested but only {} documents have a same-author match",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(count);
    eligible.sort_unstable();

    eligible
        .into_iter()
        .map(|id| {
            let query = Query::for_id(corpus, id)?;
            let Setting::OneToMany { distractor_authors } = setting else {
                return Ok(query);
            };
            let own = primary_author(corpus, id)?;
            let mut others: Vec<&str> = by_author
                .keys()
                .copied()
                .filter(|a| {
                    *a != own
                        && !query
                            .target()
                            .author
                            .as_ref()
                            .is_some_and(|l| l.names().any(|n| n == *a))
                })
                .collect();
            if others.len() < distractor_authors {
                return Err(DasError::Config(format!(
                    "{distractor_authors} distractor authors requested but only {} are available",
                    others.len()
                )));
            }
            others.shuffle(&mut rng);
            let keep: BTreeSet<&str> = others[..distractor_authors].iter().copied().collect();
            let excluded: Vec<String> = corpus
                .iter()
                .filter(|d| {
                    let relevant = query.target().same_author(d);
                    let distractor = d
                        .author
                        .as_ref()
                        .is_some_and(|l| l.names().any(|n| keep.contains(n)));
                    !(relevant || distractor)
                })
                .map(|d| d.id.clone())
                .collect();
            Ok(query.exclude(excluded))
        })
        .collect()
}

/// Everything needed to turn a query into a shortlist.
pub struct Pipeline<'a> {
    pub judge: &'a dyn GroupJudge,
    /// Without an index the whole candidate universe is the pool.
    pub index: Option<&'a EmbeddingIndex>,
    pub coarse_k: usize,
    pub tsa: TsaConfig,
    pub mode: TournamentMode,
}

impl Pipeline<'_> {
    pub fn system_name(&self) -> &'static str {
        match self.mode {
            TournamentMode::Full => "DAS",
            TournamentMode::SinglePass => "DAS-PE",
        }
    }

    pub fn config_echo(&self) -> serde_json::Value {
        serde_json::json!({
            "system": self.system_name(),
            "model": self.judge.model_tag(),
            "embedding": self.index.map(|i| i.provider_tag()),
            "coarse_k": self.index.map(|_| self.coarse_k),
            "tsa": self.tsa,
            "mode": self.mode,
        })
    }
}

/// One query's pool, shortlist and tournament trace.
#[derive(Clone, Debug)]
pub struct QueryRun {
    pub pool: FilteredPool,
    pub result: AttributionResult,
    pub labeled: LabeledQueryResult,
    pub verdicts: Vec<VerdictRecord>,
    pub trajectories: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub report: EvaluationReport,
    pub runs: Vec<QueryRun>,
}

fn run_query(
    corpus: &Corpus,
    query: &Query,
    pipeline: &Pipeline<'_>,
    tournament: &Tournament<'_>,
) -> Result<QueryRun> {
    let universe = candidate_universe(corpus, query)?;
    let pool = match pipeline.index {
        Some(index) => index.top_k(query, &universe, pipeline.coarse_k)?,
        None => FilteredPool::unfiltered(query.id(), universe.iter().map(|d| d.id.as_str())),
    };
    let outcome = tournament.run(query, &pool, pipeline.mode)?;
    let labeled = LabeledQueryResult::from_labels(query, &universe, outcome.result.ids())?;
    Ok(QueryRun {
        pool,
        result: outcome.result,
        labeled,
        verdicts: outcome.verdicts,
        trajectories: outcome.trajectories,
    })
}

/// Runs every query through the pipeline (concurrently) and scores the
/// shortlists against author labels.
pub fn run_benchmark(
    corpus: &Corpus,
    queries: &[Query],
    pipeline: &Pipeline<'_>,
    k_list: &[usize],
) -> Result<BenchmarkOutcome> {
    if queries.is_empty() {
        return Err(DasError::EmptyResults);
    }
    if let Some(q) = queries.iter().find(|q| q.target().author.is_none()) {
        return Err(DasError::MissingLabel(q.id().to_owned()));
    }
    let tournament = Tournament::new(corpus, pipeline.judge, pipeline.tsa.clone())?;
    let runs: Vec<QueryRun> = queries
        .par_iter()
        .map(|q| run_query(corpus, q, pipeline, &tournament))
        .collect::<Result<_>>()?;
    let labeled: Vec<LabeledQueryResult> = runs.iter().map(|r| r.labeled.clone()).collect();
    let report = EvaluationReport::build(
        pipeline.system_name(),
        &labeled,
        k_list,
        pipeline.config_echo(),
    )?;
    Ok(BenchmarkOutcome { report, runs })
}
