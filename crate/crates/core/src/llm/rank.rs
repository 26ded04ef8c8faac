use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::ResponseCache;
use super::client::{Completion, CompletionRequest, LlmClient, LlmError, RankingTask};
use super::parse::parse_ranking;
use super::template::{retry_note, PromptTemplate, RenderLimits};
use crate::corpus::Document;
use crate::error::{DasError, Result};

/// Verdict for one group: the top two candidates, best first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRanking {
    pub group: Vec<String>,
    pub winners: Vec<String>,
    pub raw_response: String,
    pub attempts: u32,
    /// False when no reply could be parsed and the fallback pick was used.
    pub valid: bool,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// Anything that can pick the top two of a group. The tournament only needs this.
pub trait GroupJudge: Sync {
    fn judge(&self, target: &Document, group: &[&Document]) -> Result<GroupRanking>;

    fn model_tag(&self) -> &str;

    fn usage(&self) -> Usage {
        Usage::default()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub limits: RenderLimits,
    /// Extra attempts after an unparseable reply.
    pub parse_retries: u32,
    /// Attempts per request on transport errors.
    pub transport_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            limits: RenderLimits::default(),
            parse_retries: 2,
            transport_attempts: 4,
            backoff_ms: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub remote_calls: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub parse_retries: u64,
    pub fallbacks: u64,
}

#[derive(Default)]
struct UsageCounters {
    remote_calls: AtomicU64,
    cache_hits: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    parse_retries: AtomicU64,
    fallbacks: AtomicU64,
}

/// Prompt rendering, cached dispatch, parsing and fallback around one client.
pub struct Ranker<'a> {
    client: &'a dyn LlmClient,
    template: &'a PromptTemplate,
    cache: Option<&'a ResponseCache>,
    config: RankerConfig,
    counters: UsageCounters,
}

impl<'a> Ranker<'a> {
    pub fn new(
        client: &'a dyn LlmClient,
        template: &'a PromptTemplate,
        config: RankerConfig,
    ) -> Self {
        Ranker {
            client,
            template,
            cache: None,
            config,
            counters: UsageCounters::default(),
        }
    }

    pub fn with_cache(mut self, cache: &'a ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn complete(&self, prompt: &str, task: &RankingTask<'_>) -> Result<Completion> {
        let key = self
            .cache
            .map(|_| ResponseCache::key(self.client.model_tag(), prompt));
        if let (Some(cache), Some(key)) = (self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }

        let request = CompletionRequest {
            prompt,
            task: Some(task),
        };
        let attempts = self.config.transport_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            self.counters.remote_calls.fetch_add(1, Ordering::Relaxed);
            match self.client.complete(&request) {
                Ok(done) => {
                    self.counters
                        .prompt_tokens
                        .fetch_add(done.prompt_tokens, Ordering::Relaxed);
                    self.counters
                        .completion_tokens
                        .fetch_add(done.completion_tokens, Ordering::Relaxed);
                    if let (Some(cache), Some(key)) = (self.cache, &key) {
                        cache.insert(key, self.client.model_tag(), &done)?;
                    }
                    return Ok(done);
                }
                Err(LlmError::Transport(msg)) => last = msg,
                Err(LlmError::Fatal(msg)) => return Err(DasError::Provider(msg)),
            }
        }
        Err(DasError::Provider(format!(
            "gave up after {attempts} attempts: {last}"
        )))
    }

    /// Asks the model to rank `group` against `target` and keeps the top two.
    /// Groups need at least two members; singletons never reach the model.
    pub fn rank(&self, target: &Document, group: &[&Document]) -> Result<GroupRanking> {
        if group.len() < 2 {
            return Err(DasError::GroupSize {
                size: group.len(),
                min: 2,
                max: self.config.limits.max_group_size,
            });
        }
        let rendered = self.template.render(target, group, &self.config.limits)?;
        let task = RankingTask {
            target,
            candidates: rendered
                .aliases
                .aliases()
                .iter()
                .map(String::as_str)
                .zip(group.iter().copied())
                .collect(),
        };
        let group_ids: Vec<String> = group.iter().map(|d| d.id.clone()).collect();

        let mut raw = String::new();
        let (mut prompt_tokens, mut completion_tokens) = (0, 0);
        let max_attempts = self.config.parse_retries + 1;
        for attempt in 1..=max_attempts {
            let prompt = if attempt == 1 {
                rendered.text.clone()
            } else {
                self.counters.parse_retries.fetch_add(1, Ordering::Relaxed);
                format!(
                    "{}{}",
                    rendered.text,
                    retry_note(&rendered.aliases, attempt - 1)
                )
            };
            let done = self.complete(&prompt, &task)?;
            prompt_tokens += done.prompt_tokens;
            completion_tokens += done.completion_tokens;
            raw = done.text;
            if let Ok(ranked) = parse_ranking(&raw, &rendered.aliases) {
                if ranked.len() >= 2 {
                    return Ok(GroupRanking {
                        group: group_ids,
                        winners: ranked[..2].to_vec(),
                        raw_response: raw,
                        attempts: attempt,
                        valid: true,
                        prompt_tokens,
                        completion_tokens,
                    });
                }
            }
        }

        self.counters.fallbacks.fetch_add(1, Ordering::Relaxed);
        Ok(GroupRanking {
            winners: group_ids[..2].to_vec(),
            group: group_ids,
            raw_response: raw,
            attempts: max_attempts,
            valid: false,
            prompt_tokens,
            completion_tokens,
        })
    }
}

impl GroupJudge for Ranker<'_> {
    fn judge(&self, target: &Document, group: &[&Document]) -> Result<GroupRanking> {
        self.rank(target, group)
    }

    fn model_tag(&self) -> &str {
        self.client.model_tag()
    }

    fn usage(&self) -> Usage {
        let c = &self.counters;
        Usage {
            remote_calls: c.remote_calls.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            prompt_tokens: c.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: c.completion_tokens.load(Ordering::Relaxed),
            parse_retries: c.parse_retries.load(Ordering::Relaxed),
            fallbacks: c.fallbacks.load(Ordering::Relaxed),
        }
    }
}

/// One-shot ranking with default limits and no cache.
pub fn llm_rank(
    client: &dyn LlmClient,
    target: &Document,
    group: &[&Document],
    template: &PromptTemplate,
) -> Result<GroupRanking> {
    Ranker::new(client, template, RankerConfig::default()).rank(target, group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::llm::client::ScriptedClient;
    use crate::llm::oracle::{DeterministicOracle, OracleConfig};
    use crate::llm::template::Domain;

    fn group(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("g{i}"), format!("candidate text {i}")))
            .collect()
    }

    fn no_wait() -> RankerConfig {
        RankerConfig {
            backoff_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn parses_winners_from_reply() {
        let docs = group(10);
        let refs: Vec<&Document> = docs.iter().collect();
        let client = ScriptedClient::from_texts(["Ranking: C, A, F, B, D, E, G, H, I, J"]);
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let r = llm_rank(&client, &Document::new("t", "target"), &refs, &tpl).unwrap();
        assert_eq!(r.winners, ["g2", "g0"]);
        assert!(r.valid);
        assert_eq!(r.attempts, 1);
    }

    #[test]
    fn hallucinated_alias_retries_once() {
        let docs = group(10);
        let refs: Vec<&Document> = docs.iter().collect();
        let client = ScriptedClient::from_texts(["RANKING: Z > A", "RANKING: B > A"]);
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let ranker = Ranker::new(&client, &tpl, no_wait());
        let r = ranker.rank(&Document::new("t", "x"), &refs).unwrap();
        assert_eq!(r.winners, ["g1", "g0"]);
        assert_eq!(r.attempts, 2);
        assert!(r.valid);
        assert_eq!(client.calls(), 2);
    }

    #[test]
    fn falls_back_to_first_two_after_retries() {
        let docs = group(4);
        let refs: Vec<&Document> = [&docs[3], &docs[1], &docs[0], &docs[2]].to_vec();
        let client = ScriptedClient::from_texts(["RANKING: Z", "???", "RANKING: Q > A"]);
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let ranker = Ranker::new(&client, &tpl, no_wait());
        let r = ranker.rank(&Document::new("t", "x"), &refs).unwrap();
        assert!(!r.valid);
        assert_eq!(r.attempts, 3);
        assert_eq!(r.winners, ["g3", "g1"]);
        assert_eq!(ranker.usage().fallbacks, 1);
    }

    #[test]
    fn transport_errors_are_retried_then_surface() {
        let docs = group(3);
        let refs: Vec<&Document> = docs.iter().collect();
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let flaky = ScriptedClient::new([
            Err(LlmError::Transport("timeout".into())),
            Ok("RANKING: B > C > A".into()),
        ]);
        let r = Ranker::new(&flaky, &tpl, no_wait())
            .rank(&Document::new("t", "x"), &refs)
            .unwrap();
        assert_eq!(r.winners, ["g1", "g2"]);

        let dead = ScriptedClient::new((0..4).map(|_| Err(LlmError::Transport("down".into()))));
        let err = Ranker::new(&dead, &tpl, no_wait())
            .rank(&Document::new("t", "x"), &refs)
            .unwrap_err();
        assert!(err.is_provider());
        assert_eq!(dead.calls(), 4);
    }

    #[test]
    fn singleton_groups_are_rejected() {
        let docs = group(1);
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let client = ScriptedClient::from_texts(Vec::<String>::new());
        assert!(matches!(
            llm_rank(&client, &Document::new("t", "x"), &[&docs[0]], &tpl),
            Err(DasError::GroupSize { size: 1, .. })
        ));
    }

    #[test]
    fn identical_prompts_hit_the_cache() {
        let mut docs = group(5);
        docs.push(Document::new("t", "target").with_author("x"));
        docs[3].author = Some("x".into());
        let corpus = Corpus::from_documents(docs.clone()).unwrap();
        let oracle = DeterministicOracle::from_corpus(&corpus, OracleConfig::default());
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let cache = ResponseCache::in_memory();
        let ranker = Ranker::new(&oracle, &tpl, no_wait()).with_cache(&cache);
        let refs: Vec<&Document> = docs[..5].iter().collect();
        let a = ranker.rank(&docs[5], &refs).unwrap();
        let b = ranker.rank(&docs[5], &refs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.winners[0], "g3");
        let usage = ranker.usage();
        assert_eq!((usage.remote_calls, usage.cache_hits), (1, 1));
    }
}
