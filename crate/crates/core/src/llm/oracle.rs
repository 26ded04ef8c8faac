use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::client::{estimate_tokens, Completion, CompletionRequest, LlmClient, LlmError};
use crate::corpus::{AuthorLabel, Corpus, Document};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Probability that a verdict ignores authorship and ranks at random.
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            error_rate: 0.0,
            seed: 0,
        }
    }
}

/// Offline judge. Candidates sharing an author with the target score 1, the
/// rest 0, and seeded per-document noise orders equal scores. With
/// probability `error_rate` a verdict is pure noise.
///
/// Verdicts depend on the set of documents in the group, never on their
/// order, so alias assignment cannot influence the outcome.
pub struct DeterministicOracle {
    labels: HashMap<String, AuthorLabel>,
    config: OracleConfig,
    tag: String,
}

impl DeterministicOracle {
    pub fn new(labels: HashMap<String, AuthorLabel>, config: OracleConfig) -> Self {
        assert!(
            (0.0..=1.0).contains(&config.error_rate),
            "oracle error rate must lie in [0, 1]"
        );
        DeterministicOracle {
            labels,
            tag: format!("oracle/p{}/s{}", config.error_rate, config.seed),
            config,
        }
    }

    /// Uses the corpus author labels as the hidden ground truth.
    pub fn from_corpus(corpus: &Corpus, config: OracleConfig) -> Self {
        let labels = corpus
            .iter()
            .filter_map(|d| d.author.clone().map(|a| (d.id.clone(), a)))
            .collect();
        Self::new(labels, config)
    }

    fn label<'a>(&'a self, doc: &'a Document) -> Option<&'a AuthorLabel> {
        self.labels.get(&doc.id).or(doc.author.as_ref())
    }

    fn call_seed(&self, target: &Document, candidates: &[(&str, &Document)]) -> u64 {
        let mut ids: Vec<&str> = candidates.iter().map(|(_, d)| d.id.as_str()).collect();
        ids.sort_unstable();
        let mut key = String::with_capacity(64);
        key.push_str(&target.id);
        for id in ids {
            key.push('\u{1f}');
            key.push_str(id);
        }
        xxh3_64_with_seed(key.as_bytes(), self.config.seed)
    }

    /// Aliases ordered best first.
    pub fn verdict<'c>(
        &self,
        target: &Document,
        candidates: &[(&'c str, &Document)],
    ) -> Vec<&'c str> {
        let seed = self.call_seed(target, candidates);
        let roll = xxh3_64_with_seed(b"corrupt", seed) as f64 / u64::MAX as f64;
        let corrupted = roll < self.config.error_rate;
        let target_label = self.label(target);

        let mut scored: Vec<(u8, u64, &str)> = candidates
            .iter()
            .map(|&(alias, doc)| {
                let hit = match (target_label, self.label(doc)) {
                    (Some(t), Some(c)) if !corrupted => t.intersects(c) as u8,
                    _ => 0,
                };
                (hit, xxh3_64_with_seed(doc.id.as_bytes(), seed), alias)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
        scored.into_iter().map(|(_, _, alias)| alias).collect()
    }
}

impl LlmClient for DeterministicOracle {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        let task = request
            .task
            .ok_or_else(|| LlmError::Fatal("oracle needs a structured ranking task".into()))?;
        let order = self.verdict(task.target, &task.candidates);
        let text = format!(
            "Compared stylistic evidence.\nRANKING: {}",
            order.join(" > ")
        );
        Ok(Completion {
            prompt_tokens: estimate_tokens(request.prompt),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<Document> {
        vec![
            Document::new("t", "target").with_author("x"),
            Document::new("a", "a").with_author("y"),
            Document::new("b", "b").with_author("x"),
            Document::new("c", "c").with_author("z"),
            Document::new("d", "d"),
        ]
    }

    #[test]
    fn zero_noise_puts_same_author_first() {
        let ds = docs();
        let corpus = Corpus::from_documents(ds.clone()).unwrap();
        let oracle = DeterministicOracle::from_corpus(&corpus, OracleConfig::default());
        let cands: Vec<(&str, &Document)> =
            vec![("A", &ds[1]), ("B", &ds[2]), ("C", &ds[3]), ("D", &ds[4])];
        assert_eq!(oracle.verdict(&ds[0], &cands)[0], "B");
    }

    #[test]
    fn verdict_ignores_candidate_order() {
        let ds = docs();
        let oracle = DeterministicOracle::new(
            HashMap::new(),
            OracleConfig {
                error_rate: 0.5,
                seed: 3,
            },
        );
        let forward: Vec<(&str, &Document)> = vec![("A", &ds[1]), ("B", &ds[2]), ("C", &ds[3])];
        let backward: Vec<(&str, &Document)> = vec![("A", &ds[3]), ("B", &ds[2]), ("C", &ds[1])];
        let ids = |order: Vec<&str>, cands: &[(&str, &Document)]| -> Vec<String> {
            order
                .iter()
                .map(|a| cands.iter().find(|(x, _)| x == a).unwrap().1.id.clone())
                .collect()
        };
        assert_eq!(
            ids(oracle.verdict(&ds[0], &forward), &forward),
            ids(oracle.verdict(&ds[0], &backward), &backward)
        );
    }

    #[test]
    fn full_error_rate_sometimes_buries_the_match() {
        let ds = docs();
        let mut buried = 0;
        for seed in 0..200 {
            let oracle = DeterministicOracle::new(
                HashMap::new(),
                OracleConfig {
                    error_rate: 1.0,
                    seed,
                },
            );
            let cands: Vec<(&str, &Document)> = vec![("A", &ds[1]), ("B", &ds[2]), ("C", &ds[3])];
            if oracle.verdict(&ds[0], &cands)[0] != "B" {
                buried += 1;
            }
        }
        // roughly 2/3 of random orders do not start with B
        assert!((100..170).contains(&buried), "{buried}");
    }
}
