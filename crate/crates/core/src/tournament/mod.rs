//! Tournament-style attribution: repeated shuffle, group, keep-two rounds
//! with geometrically growing rewards, aggregated over independent trials.

mod log;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{sha256_hex, Corpus, Document, Query};
use crate::error::{DasError, Result};
use crate::filter::FilteredPool;
use crate::llm::{GroupJudge, GroupRanking, Usage};

pub use log::{
    check_score_conservation, read_verdict_log, round_summaries, RoundSummary, VerdictLog,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsaConfig {
    pub trials: u32,
    pub group_size: usize,
    pub alpha: f64,
    pub final_k: usize,
    pub seed: u64,
    /// Concurrent group verdicts per round; 0 uses the global thread pool.
    #[serde(default)]
    pub parallelism: usize,
}

impl Default for TsaConfig {
    fn default() -> Self {
        TsaConfig {
            trials: 5,
            group_size: 10,
            alpha: 5.0,
            final_k: 20,
            seed: 0,
            parallelism: 0,
        }
    }
}

impl TsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(DasError::Config("trials must be at least 1".into()));
        }
        // l >= 3 guarantees each full group eliminates someone
        if self.group_size < 3 {
            return Err(DasError::Config("group size must be at least 3".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(DasError::Config(
                "alpha must be a finite number above 1".into(),
            ));
        }
        if self.final_k < 2 {
            return Err(DasError::Config("final k must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TournamentMode {
    /// Progressive elimination with dynamic weighting.
    Full,
    /// One grouping and scoring pass per trial over the whole pool.
    SinglePass,
}

/// Cumulative scores over a fixed key set (the filtered pool).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    scores: HashMap<String, f64>,
}

impl ScoreMap {
    pub fn new<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        ScoreMap {
            scores: ids.into_iter().map(|id| (id.to_owned(), 0.0)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.values().sum()
    }

    /// Adds points to a pool member. Panics on ids outside the pool.
    pub fn award(&mut self, id: &str, points: f64) {
        debug_assert!(points >= 0.0);
        *self
            .scores
            .get_mut(id)
            .unwrap_or_else(|| panic!("{id:?} is not in the scored pool")) += points;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Shuffles `pool` and cuts it into consecutive groups of `group_size`;
/// only the last group may be smaller.
pub fn partition<T: Clone, R: Rng + ?Sized>(
    pool: &[T],
    group_size: usize,
    rng: &mut R,
) -> Vec<Vec<T>> {
    assert!(group_size >= 1, "group size must be positive");
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    shuffled.chunks(group_size).map(<[T]>::to_vec).collect()
}

/// Top pick earns `2·phi`, runner-up `phi`. Returns the survivors.
pub fn score_group(scores: &mut ScoreMap, ranking: &GroupRanking, phi: f64) -> Vec<String> {
    scores.award(&ranking.winners[0], 2.0 * phi);
    scores.award(&ranking.winners[1], phi);
    ranking.winners.clone()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Award {
    pub doc_id: String,
    pub points: f64,
}

/// One group outcome, as written to the verdict log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub trial: u32,
    pub round: u32,
    pub phi: f64,
    pub group: Vec<String>,
    pub winners: Vec<String>,
    pub awards: Vec<Award>,
    /// Lone document that advanced without a model call.
    pub singleton: bool,
    pub valid: bool,
    pub attempts: u32,
    pub raw_response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub doc_id: String,
    pub score: f64,
    pub coarse_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub query_id: String,
    pub ranked: Vec<RankedCandidate>,
    pub manifest_ref: String,
}

impl AttributionResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|r| r.doc_id.as_str())
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

#[derive(Clone, Debug)]
pub struct TsaOutcome {
    pub result: AttributionResult,
    pub scores: ScoreMap,
    pub verdicts: Vec<VerdictRecord>,
    /// Pool size at the start of every round, plus the final size, per trial.
    pub trajectories: Vec<Vec<usize>>,
    pub usage: Usage,
}

impl TsaOutcome {
    /// Model-judged groups per trial (singletons excluded).
    pub fn calls_per_trial(&self) -> Vec<usize> {
        let trials = self.trajectories.len();
        let mut counts = vec![0; trials];
        for v in self.verdicts.iter().filter(|v| !v.singleton) {
            counts[v.trial as usize - 1] += 1;
        }
        counts
    }
}

type ReplayKey = (u32, u32, Vec<String>);

type Sink<'a> = &'a (dyn Fn(&VerdictRecord) -> Result<()> + Sync);

/// Runs tournaments over filtered pools with one judge and configuration.
pub struct Tournament<'a> {
    corpus: &'a Corpus,
    judge: &'a dyn GroupJudge,
    config: TsaConfig,
    replay: HashMap<ReplayKey, GroupRanking>,
    sink: Option<Sink<'a>>,
    thread_pool: Option<rayon::ThreadPool>,
}

impl<'a> Tournament<'a> {
    pub fn new(corpus: &'a Corpus, judge: &'a dyn GroupJudge, config: TsaConfig) -> Result<Self> {
        config.validate()?;
        let thread_pool = match config.parallelism {
            0 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| DasError::Config(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Tournament {
            corpus,
            judge,
            config,
            replay: HashMap::new(),
            sink: None,
            thread_pool,
        })
    }

    pub fn config(&self) -> &TsaConfig {
        &self.config
    }

    /// Reuses logged verdicts for groups that come up again, so an
    /// interrupted run can resume without repeating model calls.
    pub fn with_replay(mut self, records: impl IntoIterator<Item = VerdictRecord>) -> Self {
        for r in records.into_iter().filter(|r| !r.singleton) {
            let ranking = GroupRanking {
                group: r.group.clone(),
                winners: r.winners,
                raw_response: r.raw_response,
                attempts: r.attempts,
                valid: r.valid,
                prompt_tokens: r.prompt_tokens,
                completion_tokens: r.completion_tokens,
            };
            self.replay.insert((r.trial, r.round, r.group), ranking);
        }
        self
    }

    /// Called with every verdict as soon as its round completes.
    pub fn with_sink(mut self, sink: Sink<'a>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn run(
        &self,
        query: &Query,
        pool: &FilteredPool,
        mode: TournamentMode,
    ) -> Result<TsaOutcome> {
        if pool.is_empty() {
            return Err(DasError::EmptyUniverse {
                excluded: query.excluded_ids().len(),
            });
        }
        let docs: HashMap<&str, &Document> = pool
            .ids()
            .map(|id| {
                if query.is_excluded(id) {
                    return Err(DasError::Config(format!(
                        "pool contains excluded id {id:?}"
                    )));
                }
                self.corpus.require(id).map(|d| (id, d))
            })
            .collect::<Result<_>>()?;
        let ids: Vec<&str> = pool.ids().collect();

        let mut scores = ScoreMap::new(ids.iter().copied());
        let mut verdicts = Vec::new();
        let mut trajectories = Vec::new();
        let usage_before = self.judge.usage();

        for trial in 1..=self.config.trials {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(trial as u64);
            let mut current: Vec<&str> = ids.clone();
            let mut phi = 1.0;
            let mut round = 0;
            let mut trajectory = vec![current.len()];

            while current.len() > self.config.final_k {
                round += 1;
                let groups = partition(&current, self.config.group_size, &mut rng);
                let records = self.play_round(query.target(), &docs, &groups, trial, round, phi)?;
                let mut survivors = Vec::with_capacity(2 * groups.len());
                for record in &records {
                    for award in &record.awards {
                        scores.award(&award.doc_id, award.points);
                    }
                    survivors.extend(record.winners.iter().map(|w| docs[w.as_str()].id.as_str()));
                }
                verdicts.extend(records);
                if mode == TournamentMode::SinglePass {
                    trajectory.push(current.len());
                    break;
                }
                debug_assert!(survivors.len() < current.len());
                current = survivors;
                trajectory.push(current.len());
                phi *= self.config.alpha;
            }
            trajectories.push(trajectory);
        }

        let usage_after = self.judge.usage();
        let usage = Usage {
            remote_calls: usage_after.remote_calls - usage_before.remote_calls,
            cache_hits: usage_after.cache_hits - usage_before.cache_hits,
            prompt_tokens: usage_after.prompt_tokens - usage_before.prompt_tokens,
            completion_tokens: usage_after.completion_tokens - usage_before.completion_tokens,
            parse_retries: usage_after.parse_retries - usage_before.parse_retries,
            fallbacks: usage_after.fallbacks - usage_before.fallbacks,
        };

        let result = AttributionResult {
            query_id: query.id().to_owned(),
            ranked: final_ranking(pool, &scores, self.config.final_k),
            manifest_ref: self.manifest_ref(query, pool, mode)?,
        };
        Ok(TsaOutcome {
            result,
            scores,
            verdicts,
            trajectories,
            usage,
        })
    }

    fn judge_group(
        &self,
        target: &Document,
        group: &[&Document],
        key: ReplayKey,
    ) -> Result<GroupRanking> {
        if let Some(hit) = self.replay.get(&key) {
            return Ok(hit.clone());
        }
        let ranking = self.judge.judge(target, group)?;
        let in_group = |id: &String| ranking.group.contains(id);
        if ranking.winners.len() != 2
            || ranking.winners[0] == ranking.winners[1]
            || !ranking.winners.iter().all(in_group)
            || ranking.group != key.2
        {
            return Err(DasError::Provider(format!(
                "judge returned winners {:?} for group {:?}",
                ranking.winners, key.2
            )));
        }
        Ok(ranking)
    }

    fn play_round(
        &self,
        target: &Document,
        docs: &HashMap<&str, &Document>,
        groups: &[Vec<&str>],
        trial: u32,
        round: u32,
        phi: f64,
    ) -> Result<Vec<VerdictRecord>> {
        let play = |group: &Vec<&str>| -> Result<VerdictRecord> {
            if group.len() == 1 {
                let id = group[0].to_owned();
                return Ok(VerdictRecord {
                    trial,
                    round,
                    phi,
                    group: vec![id.clone()],
                    winners: vec![id.clone()],
                    awards: vec![Award {
                        doc_id: id,
                        points: 2.0 * phi,
                    }],
                    singleton: true,
                    valid: true,
                    attempts: 0,
                    raw_response: String::new(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                });
            }
            let members: Vec<&Document> = group.iter().map(|id| docs[id]).collect();
            let key = (trial, round, group.iter().map(|s| s.to_string()).collect());
            let ranking = self.judge_group(target, &members, key)?;
            Ok(VerdictRecord {
                trial,
                round,
                phi,
                awards: vec![
                    Award {
                        doc_id: ranking.winners[0].clone(),
                        points: 2.0 * phi,
                    },
                    Award {
                        doc_id: ranking.winners[1].clone(),
                        points: phi,
                    },
                ],
                group: ranking.group,
                winners: ranking.winners,
                singleton: false,
                valid: ranking.valid,
                attempts: ranking.attempts,
                raw_response: ranking.raw_response,
                prompt_tokens: ranking.prompt_tokens,
                completion_tokens: ranking.completion_tokens,
            })
        };

        let outcomes: Vec<Result<VerdictRecord>> = match &self.thread_pool {
            Some(tp) => tp.install(|| groups.par_iter().map(play).collect()),
            None => groups.par_iter().map(play).collect(),
        };

        let mut records = Vec::with_capacity(outcomes.len());
        let mut first_err = None;
        for outcome in outcomes {
            match outcome {
                Ok(record) => {
                    if let Some(sink) = self.sink {
                        sink(&record)?;
                    }
                    records.push(record);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(records),
        }
    }

    fn manifest_ref(
        &self,
        query: &Query,
        pool: &FilteredPool,
        mode: TournamentMode,
    ) -> Result<String> {
        let key = serde_json::json!({
            "query": query.id(),
            "pool": pool.digest()?,
            "config": self.config,
            "mode": mode,
            "model": self.judge.model_tag(),
        });
        Ok(sha256_hex(key.to_string().as_bytes())[..16].to_owned())
    }
}

fn final_ranking(pool: &FilteredPool, scores: &ScoreMap, final_k: usize) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = pool
        .candidates
        .iter()
        .map(|c| RankedCandidate {
            doc_id: c.doc_id.clone(),
            score: scores.get(&c.doc_id).unwrap_or(0.0),
            coarse_similarity: c.similarity,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.coarse_similarity.total_cmp(&a.coarse_similarity))
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    ranked.truncate(final_k);
    ranked
}

pub fn run_tsa(
    corpus: &Corpus,
    query: &Query,
    pool: &FilteredPool,
    config: &TsaConfig,
    judge: &dyn GroupJudge,
) -> Result<TsaOutcome> {
    Tournament::new(corpus, judge, config.clone())?.run(query, pool, TournamentMode::Full)
}

/// Ablation without progressive elimination: each trial groups the full
/// pool once and scores it at unit weight.
pub fn run_tsa_pe_ablation(
    corpus: &Corpus,
    query: &Query,
    pool: &FilteredPool,
    config: &TsaConfig,
    judge: &dyn GroupJudge,
) -> Result<TsaOutcome> {
    Tournament::new(corpus, judge, config.clone())?.run(query, pool, TournamentMode::SinglePass)
}
