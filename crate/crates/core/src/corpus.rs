//! Document collections: loading, validation and candidate selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DasError, Result};

/// Default character budget per document; longer texts keep their head.
pub const DEFAULT_MAX_CHARS: usize = 20_000;

/// Ground-truth author label. Research-paper style corpora carry an author
/// list, everything else a single name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AuthorLabel {
    One(String),
    Many(Vec<String>),
}

impl AuthorLabel {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        let slice: &[String] = match self {
            AuthorLabel::One(name) => std::slice::from_ref(name),
            AuthorLabel::Many(names) => names,
        };
        slice.iter().map(String::as_str)
    }

    /// Two labels match when their author sets share at least one name.
    pub fn intersects(&self, other: &AuthorLabel) -> bool {
        self.names().any(|a| other.names().any(|b| a == b))
    }
}

impl From<&str> for AuthorLabel {
    fn from(name: &str) -> Self {
        AuthorLabel::One(name.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Evaluation-only label. Filtering and tournament code never read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<AuthorLabel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            author: None,
            meta: BTreeMap::new(),
            truncated: false,
        }
    }

    pub fn with_author(mut self, author: impl Into<AuthorLabel>) -> Self {
        self.author = Some(author.into());
        self
    }

    pub fn same_author(&self, other: &Document) -> bool {
        match (&self.author, &other.author) {
            (Some(a), Some(b)) => a.intersects(b),
            _ => false,
        }
    }
}

impl From<String> for AuthorLabel {
    fn from(name: String) -> Self {
        AuthorLabel::One(name)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default)]
    author: Option<AuthorLabel>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub max_chars: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_chars: DEFAULT_MAX_CHARS,
        }
    }
}

/// An immutable, insertion-ordered document collection.
#[derive(Clone, Debug)]
pub struct Corpus {
    documents: Vec<Document>,
    positions: HashMap<String, usize>,
    source_digest: String,
}

impl Corpus {
    /// Builds a corpus from in-memory documents. The digest is taken over the
    /// canonical JSONL serialization, so it matches what `load_corpus` reports
    /// after a `write_jsonl` round trip.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(DasError::EmptyCorpus);
        }
        let mut positions = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(DasError::EmptyText {
                    line: i + 1,
                    id: doc.id.clone(),
                });
            }
            if let Some(first) = positions.insert(doc.id.clone(), i) {
                return Err(DasError::DuplicateId {
                    id: doc.id.clone(),
                    first_line: first + 1,
                    second_line: i + 1,
                });
            }
        }
        let mut bytes = Vec::new();
        write_records(&documents, &mut bytes)?;
        Ok(Corpus {
            documents,
            positions,
            source_digest: sha256_hex(&bytes),
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.positions.get(id).map(|&i| &self.documents[i])
    }

    pub fn require(&self, id: &str) -> Result<&Document> {
        self.get(id)
            .ok_or_else(|| DasError::UnknownId(id.to_owned()))
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn write_jsonl(&self, out: impl Write) -> Result<()> {
        write_records(&self.documents, out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_jsonl(&mut bytes)?;
        fs::write(path, bytes).map_err(|e| DasError::io(path, e))
    }
}

fn write_records(documents: &[Document], mut out: impl Write) -> Result<()> {
    for doc in documents {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")
            .map_err(|e| DasError::io("<output>", e))?;
    }
    Ok(())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_corpus(path: &Path, format: CorpusFormat, options: LoadOptions) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| DasError::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&bytes, options),
    }
}

/// Parses line-delimited records. Blank lines are skipped; unknown fields are ignored.
pub fn parse_jsonl(bytes: &[u8], options: LoadOptions) -> Result<Corpus> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        DasError::Parse {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;

    let mut documents = Vec::new();
    let mut positions: HashMap<String, usize> = HashMap::new();
    let mut lines_of: Vec<usize> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(raw_line).map_err(|e| DasError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.text.trim().is_empty() {
            return Err(DasError::EmptyText {
                line,
                id: record.id,
            });
        }
        if let Some(&first) = positions.get(&record.id) {
            return Err(DasError::DuplicateId {
                id: record.id,
                first_line: lines_of[first],
                second_line: line,
            });
        }

        let (text, truncated) = truncate_chars(record.text, options.max_chars);
        let meta = record
            .meta
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect();

        positions.insert(record.id.clone(), documents.len());
        lines_of.push(line);
        documents.push(Document {
            id: record.id,
            text,
            author: record.author,
            meta,
            truncated: truncated || record.truncated,
        });
    }

    if documents.is_empty() {
        return Err(DasError::EmptyCorpus);
    }
    Ok(Corpus {
        documents,
        positions,
        source_digest: sha256_hex(bytes),
    })
}

fn truncate_chars(text: String, max_chars: usize) -> (String, bool) {
    match text.char_indices().nth(max_chars) {
        Some((cut, _)) => (text[..cut].to_owned(), true),
        None => (text, false),
    }
}

/// A target document plus the ids that must never appear among its candidates.
#[derive(Clone, Debug)]
pub struct Query {
    target: Document,
    excluded_ids: BTreeSet<String>,
}

impl Query {
    pub fn new(target: Document) -> Self {
        let excluded_ids = BTreeSet::from([target.id.clone()]);
        Query {
            target,
            excluded_ids,
        }
    }

    pub fn for_id(corpus: &Corpus, id: &str) -> Result<Self> {
        Ok(Query::new(corpus.require(id)?.clone()))
    }

    /// Adds ids to the exclusion set. The target id always stays excluded.
    pub fn exclude<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.excluded_ids.extend(ids.into_iter().map(Into::into));
        self
    }

    pub fn target(&self) -> &Document {
        &self.target
    }

    pub fn id(&self) -> &str {
        &self.target.id
    }

    pub fn excluded_ids(&self) -> &BTreeSet<String> {
        &self.excluded_ids
    }

    pub fn is_excluded(&self, id: &str) -> bool {
        self.excluded_ids.contains(id)
    }
}

/// Every corpus document except the query's excluded ids, in corpus order.
pub fn candidate_universe<'c>(corpus: &'c Corpus, query: &Query) -> Result<Vec<&'c Document>> {
    let universe: Vec<&Document> = corpus
        .iter()
        .filter(|d| !query.is_excluded(&d.id))
        .collect();
    if universe.is_empty() {
        return Err(DasError::EmptyUniverse {
            excluded: query.excluded_ids.len(),
        });
    }
    Ok(universe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jsonl(lines: &[&str]) -> Vec<u8> {
        lines.join("\n").into_bytes()
    }

    #[test]
    fn loads_three_records() {
        let bytes = jsonl(&[
            r#"{"id":"a","text":"one","author":"x"}"#,
            r#"{"id":"b","text":"two","meta":{"year":2023,"venue":"iclr"}}"#,
            r#"{"id":"c","text":"three","author":["x","y"],"extra":1}"#,
        ]);
        let corpus = parse_jsonl(&bytes, LoadOptions::default()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.get("b").unwrap().meta["year"], "2023");
        assert_eq!(corpus.get("b").unwrap().meta["venue"], "iclr");
        assert!(corpus
            .get("a")
            .unwrap()
            .same_author(corpus.get("c").unwrap()));
        assert!(!corpus
            .get("a")
            .unwrap()
            .same_author(corpus.get("b").unwrap()));
        let ids: Vec<_> = corpus.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn duplicate_id_cites_both_lines() {
        let mut lines: Vec<String> = (1..=9)
            .map(|i| format!(r#"{{"id":"r{i}","text":"t{i}"}}"#))
            .collect();
        lines[4] = r#"{"id":"r42","text":"first"}"#.into();
        lines[8] = r#"{"id":"r42","text":"second"}"#.into();
        let err = parse_jsonl(lines.join("\n").as_bytes(), LoadOptions::default()).unwrap_err();
        match err {
            DasError::DuplicateId {
                id,
                first_line,
                second_line,
            } => {
                assert_eq!(id, "r42");
                assert_eq!((first_line, second_line), (5, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let bytes = jsonl(&[r#"{"id":"a","text":"x"}"#, "", r#"{"id":"b"}"#]);
        match parse_jsonl(&bytes, LoadOptions::default()).unwrap_err() {
            DasError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_blank_inputs() {
        assert!(matches!(
            parse_jsonl(b"\n\n", LoadOptions::default()),
            Err(DasError::EmptyCorpus)
        ));
        assert!(matches!(
            parse_jsonl(br#"{"id":"a","text":"   "}"#, LoadOptions::default()),
            Err(DasError::EmptyText { line: 1, .. })
        ));
    }

    #[test]
    fn long_text_is_truncated_and_flagged() {
        let text = "é".repeat(30);
        let line = format!(r#"{{"id":"a","text":"{text}"}}"#);
        let corpus = parse_jsonl(line.as_bytes(), LoadOptions { max_chars: 10 }).unwrap();
        let doc = corpus.get("a").unwrap();
        assert_eq!(doc.text.chars().count(), 10);
        assert!(doc.truncated);
    }

    #[test]
    fn digest_depends_only_on_bytes() {
        let bytes = jsonl(&[r#"{"id":"a","text":"one"}"#]);
        let a = parse_jsonl(&bytes, LoadOptions::default()).unwrap();
        let b = parse_jsonl(&bytes, LoadOptions::default()).unwrap();
        assert_eq!(a.source_digest(), b.source_digest());
        assert_eq!(a.source_digest().len(), 64);
    }

    #[test]
    fn universe_excludes_target_and_extra_ids() {
        let corpus = Corpus::from_documents(vec![
            Document::new("a", "x"),
            Document::new("b", "y"),
            Document::new("c", "z"),
        ])
        .unwrap();
        let q = Query::for_id(&corpus, "b").unwrap();
        let ids: Vec<_> = candidate_universe(&corpus, &q)
            .unwrap()
            .iter()
            .map(|d| d.id.clone())
            .collect();
        assert_eq!(ids, ["a", "c"]);

        let q = Query::for_id(&corpus, "a").unwrap().exclude(["c"]);
        assert_eq!(candidate_universe(&corpus, &q).unwrap().len(), 1);
    }

    #[test]
    fn universe_of_only_excluded_ids_is_an_error() {
        let corpus = Corpus::from_documents(vec![Document::new("a", "x")]).unwrap();
        let q = Query::for_id(&corpus, "a").unwrap();
        assert!(matches!(
            candidate_universe(&corpus, &q),
            Err(DasError::EmptyUniverse { .. })
        ));
    }

    #[test]
    fn unknown_query_id() {
        let corpus = Corpus::from_documents(vec![Document::new("a", "x")]).unwrap();
        assert!(matches!(
            Query::for_id(&corpus, "zz"),
            Err(DasError::UnknownId(_))
        ));
    }
}
