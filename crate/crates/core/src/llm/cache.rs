use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::Completion;
use crate::error::{DasError, Result};

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    model_tag: String,
    #[serde(flatten)]
    completion: Completion,
}

/// Response cache keyed by SHA-256 of `(model_tag, prompt)`, optionally
/// backed by an append-only JSONL file. The first response stored under a
/// key is the one that is kept.
pub struct ResponseCache {
    entries: RwLock<HashMap<String, Completion>>,
    sink: Option<Mutex<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: RwLock::new(HashMap::new()),
            sink: None,
        }
    }

    /// Opens (or creates) a cache file and loads the entries already in it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| DasError::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| DasError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                // a torn final line from an interrupted run is skipped
                let Ok(entry) = serde_json::from_str::<Entry>(&line) else {
                    if i == 0 {
                        return Err(DasError::Parse {
                            line: 1,
                            message: "not a response cache file".into(),
                        });
                    }
                    continue;
                };
                entries.entry(entry.key).or_insert(entry.completion);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| DasError::io(path, e))?;
        Ok(ResponseCache {
            entries: RwLock::new(entries),
            sink: Some(Mutex::new(file)),
        })
    }

    pub fn key(model_tag: &str, prompt: &str) -> String {
        let mut h = Sha256::new();
        h.update(model_tag.as_bytes());
        h.update([0u8]);
        h.update(prompt.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Completion> {
        self.entries
            .read()
            .expect("cache poisoned")
            .get(key)
            .cloned()
    }

    /// Stores a response unless the key is already present.
    pub fn insert(&self, key: &str, model_tag: &str, completion: &Completion) -> Result<()> {
        let mut entries = self.entries.write().expect("cache poisoned");
        if entries.contains_key(key) {
            return Ok(());
        }
        entries.insert(key.to_owned(), completion.clone());
        if let Some(sink) = &self.sink {
            let mut line = serde_json::to_vec(&Entry {
                key: key.to_owned(),
                model_tag: model_tag.to_owned(),
                completion: completion.clone(),
            })?;
            line.push(b'\n');
            sink.lock()
                .expect("cache file poisoned")
                .write_all(&line)
                .map_err(|e| DasError::io("<response cache>", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn completion(text: &str) -> Completion {
        Completion {
            text: text.into(),
            prompt_tokens: 3,
            completion_tokens: 1,
        }
    }

    #[test]
    fn first_write_wins_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let key = ResponseCache::key("m", "p");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.insert(&key, "m", &completion("first")).unwrap();
            cache.insert(&key, "m", &completion("second")).unwrap();
            assert_eq!(cache.get(&key).unwrap().text, "first");
        }
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get(&key).unwrap().text, "first");
    }

    #[test]
    fn keys_separate_models_and_prompts() {
        assert_ne!(ResponseCache::key("a", "p"), ResponseCache::key("b", "p"));
        assert_ne!(ResponseCache::key("ab", "c"), ResponseCache::key("a", "bc"));
    }
}
