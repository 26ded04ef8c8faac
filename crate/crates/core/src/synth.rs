//! Synthetic labeled corpora: per-author signature words mixed into a shared
//! pseudo-word vocabulary, so authorship leaves a trace in character n-grams.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{DasError, Result};

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
    "ch", "dr", "gl", "kr", "pl", "sh", "st", "th", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "y"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "t", "x", "ld", "mp", "ng", "sk"];

const SHARED_VOCABULARY: usize = 3000;
const SIGNATURE_WORDS: usize = 12;
const SENTENCE_WORDS: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub authors: usize,
    pub docs_per_author: usize,
    /// Share of each document's words drawn from its author's signature
    /// vocabulary, in [0, 1]. At 0 documents carry no authorship signal.
    pub signal: f64,
    pub words_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            authors: 100,
            docs_per_author: 10,
            signal: 0.3,
            words_per_doc: 120,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.authors == 0 || self.docs_per_author == 0 {
            return Err(DasError::Config(
                "authors and docs per author must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(DasError::Config(format!(
                "signal {} is outside [0, 1]",
                self.signal
            )));
        }
        if self.words_per_doc == 0 {
            return Err(DasError::Config(
                "words per document must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn author_name(author: usize) -> String {
    format!("author-{author:05}")
}

pub fn doc_id(author: usize, doc: usize) -> String {
    format!("a{author:05}-{doc:03}")
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.gen_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    w
}

fn vocabulary(seed: u64, stream: u64, size: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..size).map(|_| pseudo_word(&mut rng)).collect()
}

fn compose(
    rng: &mut impl Rng,
    words: usize,
    signal: f64,
    shared: &[String],
    signature: &[String],
) -> String {
    let mut text = String::new();
    for i in 0..words {
        let word = if rng.gen_bool(signal) {
            signature.choose(rng).unwrap()
        } else {
            shared.choose(rng).unwrap()
        };
        let sentence_start = i % SENTENCE_WORDS == 0;
        if i > 0 {
            text.push(' ');
        }
        if sentence_start {
            let mut chars = word.chars();
            if let Some(c) = chars.next() {
                text.extend(c.to_uppercase());
                text.push_str(chars.as_str());
            }
        } else {
            text.push_str(word);
        }
        if i + 1 == words || (i + 1) % SENTENCE_WORDS == 0 {
            text.push('.');
        }
    }
    text
}

/// Generates `authors × docs_per_author` labeled documents. Output depends
/// only on the parameters.
pub fn synth_corpus(params: &SynthParams) -> Result<Corpus> {
    params.validate()?;
    let shared = vocabulary(params.seed, 0, SHARED_VOCABULARY);
    let mut docs = Vec::with_capacity(params.authors * params.docs_per_author);
    for a in 0..params.authors {
        let signature = vocabulary(params.seed, 1 + a as u64, SIGNATURE_WORDS);
        for d in 0..params.docs_per_author {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_d0c5);
            rng.set_stream((a * params.docs_per_author + d) as u64);
            let text = compose(
                &mut rng,
                params.words_per_doc,
                params.signal,
                &shared,
                &signature,
            );
            docs.push(Document::new(doc_id(a, d), text).with_author(author_name(a)));
        }
    }
    Corpus::from_documents(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_labels() {
        let c = synth_corpus(&SynthParams {
            authors: 3,
            docs_per_author: 4,
            ..SynthParams::default()
        })
        .unwrap();
        assert_eq!(c.len(), 12);
        let d = c.require("a00002-003").unwrap();
        assert!(d.same_author(c.require("a00002-000").unwrap()));
        assert!(!d.same_author(c.require("a00001-000").unwrap()));
        assert!(d.text.ends_with('.'));
    }

    #[test]
    fn minimal_corpus() {
        let c = synth_corpus(&SynthParams {
            authors: 1,
            docs_per_author: 2,
            ..SynthParams::default()
        })
        .unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SynthParams {
            authors: 5,
            docs_per_author: 2,
            ..SynthParams::default()
        };
        assert_eq!(
            synth_corpus(&p).unwrap().source_digest(),
            synth_corpus(&p).unwrap().source_digest()
        );
        let q = SynthParams {
            seed: 1,
            ..p.clone()
        };
        assert_ne!(
            synth_corpus(&p).unwrap().source_digest(),
            synth_corpus(&q).unwrap().source_digest()
        );
    }

    #[test]
    fn invalid_params() {
        for p in [
            SynthParams {
                authors: 0,
                ..SynthParams::default()
            },
            SynthParams {
                docs_per_author: 0,
                ..SynthParams::default()
            },
            SynthParams {
                signal: 1.5,
                ..SynthParams::default()
            },
            SynthParams {
                signal: f64::NAN,
                ..SynthParams::default()
            },
            SynthParams {
                words_per_doc: 0,
                ..SynthParams::default()
            },
        ] {
            assert!(synth_corpus(&p).is_err(), "{p:?}");
        }
    }
}
