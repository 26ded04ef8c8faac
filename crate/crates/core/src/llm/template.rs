use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{DasError, Result};

const DEFAULT_BODY: &str = "\
You are an expert in forensic authorship analysis.

{instructions}

TARGET TEXT:
<<<
{target_text}
>>>

CANDIDATE TEXTS:
{candidates}
Rank the candidates by how likely each one is to have been written by the author of the target text, most likely first.
Judge writing style only, not topic. Explain your reasoning briefly, then finish with exactly one line of the form
RANKING: <letter> > <letter> > ...
that lists every candidate letter once.
";

/// Domain-specific guidance slotted into `{instructions}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Reviews,
    Emails,
    Blogs,
}

impl Domain {
    pub fn instructions(self) -> &'static str {
        match self {
            Domain::Reviews => {
                "The texts are anonymous peer reviews. Compare stylistic cues such as recurring \
                 phrases, how strengths and weaknesses are organised, formatting and punctuation \
                 habits, hedging, and characteristic grammar slips. The reviewed papers differ, \
                 so shared technical vocabulary is weak evidence."
            }
            Domain::Emails => {
                "The texts are emails. Compare greetings and sign-offs, salutation formality, \
                 abbreviations, line-break and list habits, and signature blocks."
            }
            Domain::Blogs => {
                "The texts are personal blog posts. Compare narrative voice, use of first person, \
                 slang and emoticons, sentence rhythm, and capitalisation or punctuation quirks."
            }
        }
    }
}

impl FromStr for Domain {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reviews" | "review" => Ok(Domain::Reviews),
            "emails" | "email" => Ok(Domain::Emails),
            "blogs" | "blog" => Ok(Domain::Blogs),
            other => Err(DasError::Config(format!("unknown prompt domain {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub instructions: String,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderLimits {
    pub max_group_size: usize,
    pub context_budget_chars: usize,
}

impl Default for RenderLimits {
    fn default() -> Self {
        RenderLimits {
            max_group_size: 26,
            context_budget_chars: 400_000,
        }
    }
}

/// Bijection between per-prompt aliases and corpus ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AliasMap {
    aliases: Vec<String>,
    ids: Vec<String>,
    by_alias: HashMap<String, usize>,
}

impl AliasMap {
    pub fn new<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let ids: Vec<String> = ids.into_iter().map(str::to_owned).collect();
        let aliases: Vec<String> = (0..ids.len()).map(alias_for).collect();
        let by_alias = aliases
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, a)| (a, i))
            .collect();
        AliasMap {
            aliases,
            ids,
            by_alias,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id_of(&self, alias: &str) -> Option<&str> {
        self.by_alias.get(alias).map(|&i| self.ids[i].as_str())
    }

    pub fn alias_of(&self, id: &str) -> Option<&str> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|i| self.aliases[i].as_str())
    }

    pub fn aliases(&self) -> &[String] {
        &self.aliases
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases
            .iter()
            .zip(&self.ids)
            .map(|(a, i)| (a.as_str(), i.as_str()))
    }
}

/// Spreadsheet-style labels: A..Z, AA..AZ, BA..
pub fn alias_for(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        let rem = (n - 1) % 26;
        out.push(b'A' + rem as u8);
        n = (n - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

#[derive(Clone, Debug)]
pub struct RenderedPrompt {
    pub text: String,
    pub aliases: AliasMap,
}

impl PromptTemplate {
    pub fn builtin(domain: Domain) -> Self {
        PromptTemplate {
            name: format!("default-{}", format!("{domain:?}").to_lowercase()),
            body: DEFAULT_BODY.to_owned(),
            instructions: domain.instructions().to_owned(),
        }
    }

    /// Reads a plain-text template. `{target_text}` and `{candidates}` are
    /// required; `{instructions}` is optional.
    pub fn from_file(path: &Path, domain: Domain) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| DasError::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Self::from_body(name, body, domain.instructions())
    }

    pub fn from_body(
        name: impl Into<String>,
        body: impl Into<String>,
        instructions: impl Into<String>,
    ) -> Result<Self> {
        let body = body.into();
        for placeholder in ["{target_text}", "{candidates}"] {
            if !body.contains(placeholder) {
                return Err(DasError::Config(format!(
                    "template is missing {placeholder}"
                )));
            }
        }
        Ok(PromptTemplate {
            name: name.into(),
            body,
            instructions: instructions.into(),
        })
    }

    pub fn render(
        &self,
        target: &Document,
        group: &[&Document],
        limits: &RenderLimits,
    ) -> Result<RenderedPrompt> {
        if group.is_empty() || group.len() > limits.max_group_size {
            return Err(DasError::GroupSize {
                size: group.len(),
                min: 1,
                max: limits.max_group_size,
            });
        }
        let aliases = AliasMap::new(group.iter().map(|d| d.id.as_str()));
        let mut candidates = String::new();
        for (alias, doc) in aliases.aliases().iter().zip(group) {
            let _ = write!(candidates, "[{alias}]\n<<<\n{}\n>>>\n\n", doc.text);
        }
        // single pass so placeholder-like text inside documents is left alone
        let mut text =
            String::with_capacity(self.body.len() + target.text.len() + candidates.len());
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let tail = &rest[open..];
            let (value, consumed) = if tail.starts_with("{target_text}") {
                (target.text.as_str(), "{target_text}".len())
            } else if tail.starts_with("{candidates}") {
                (candidates.as_str(), "{candidates}".len())
            } else if tail.starts_with("{instructions}") {
                (self.instructions.as_str(), "{instructions}".len())
            } else {
                ("{", 1)
            };
            text.push_str(value);
            rest = &tail[consumed..];
        }
        text.push_str(rest);

        if text.chars().count() > limits.context_budget_chars {
            return Err(DasError::ContextBudget {
                rendered: text.chars().count(),
                budget: limits.context_budget_chars,
                target_chars: target.text.chars().count(),
                group: group.len(),
                candidate_chars: group.iter().map(|d| d.text.chars().count()).sum(),
            });
        }
        Ok(RenderedPrompt { text, aliases })
    }
}

/// Appended on a retry after an unreadable answer; also changes the cache key.
pub fn retry_note(aliases: &AliasMap, attempt: u32) -> String {
    format!(
        "\n\n(Retry {attempt}) Your previous answer could not be read. Use only the letters {} \
         and end with one line: RANKING: <letter> > <letter> > ...",
        aliases.aliases().join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("id{i}"), format!("text {i}")))
            .collect()
    }

    #[test]
    fn alias_sequence() {
        assert_eq!(alias_for(0), "A");
        assert_eq!(alias_for(9), "J");
        assert_eq!(alias_for(25), "Z");
        assert_eq!(alias_for(26), "AA");
        assert_eq!(alias_for(27), "AB");
        assert_eq!(alias_for(52), "BA");
    }

    #[test]
    fn group_of_ten_uses_a_through_j_once() {
        let ds = docs(10);
        let group: Vec<&Document> = ds.iter().collect();
        let target = Document::new("t", "target");
        let r = PromptTemplate::builtin(Domain::Reviews)
            .render(&target, &group, &RenderLimits::default())
            .unwrap();
        for alias in "ABCDEFGHIJ".chars() {
            assert_eq!(
                r.text.matches(&format!("[{alias}]\n")).count(),
                1,
                "{alias}"
            );
        }
        assert!(!r.text.contains("[K]"));
        assert!(
            !r.text.contains("id3"),
            "raw ids must not leak into prompts"
        );
        assert_eq!(r.aliases.id_of("C"), Some("id2"));
    }

    #[test]
    fn singleton_group_renders_alias_a() {
        let ds = docs(1);
        let r = PromptTemplate::builtin(Domain::Blogs)
            .render(
                &Document::new("t", "x"),
                &[&ds[0]],
                &RenderLimits::default(),
            )
            .unwrap();
        assert!(r.text.contains("[A]\n"));
        assert!(!r.text.contains("[B]"));
    }

    #[test]
    fn shuffled_group_changes_aliases_not_consistency() {
        let ds = docs(4);
        let forward: Vec<&Document> = ds.iter().collect();
        let backward: Vec<&Document> = ds.iter().rev().collect();
        let t = Document::new("t", "x");
        let tpl = PromptTemplate::builtin(Domain::Emails);
        let a = tpl.render(&t, &forward, &RenderLimits::default()).unwrap();
        let b = tpl.render(&t, &backward, &RenderLimits::default()).unwrap();
        assert_ne!(a.aliases.alias_of("id0"), b.aliases.alias_of("id0"));
        for r in [&a, &b] {
            for (alias, id) in r.aliases.pairs() {
                assert_eq!(r.aliases.alias_of(id), Some(alias));
            }
        }
    }

    #[test]
    fn budget_and_size_limits() {
        let ds = docs(3);
        let group: Vec<&Document> = ds.iter().collect();
        let t = Document::new("t", "x".repeat(500));
        let tpl = PromptTemplate::builtin(Domain::Reviews);
        let tight = RenderLimits {
            max_group_size: 10,
            context_budget_chars: 300,
        };
        assert!(matches!(
            tpl.render(&t, &group, &tight),
            Err(DasError::ContextBudget { .. })
        ));
        let small = RenderLimits {
            max_group_size: 2,
            context_budget_chars: 100_000,
        };
        assert!(matches!(
            tpl.render(&t, &group, &small),
            Err(DasError::GroupSize { .. })
        ));
    }

    #[test]
    fn braces_in_documents_are_not_expanded() {
        let d = Document::new("a", "uses {candidates} literally");
        let t = Document::new("t", "{target_text} here");
        let r = PromptTemplate::builtin(Domain::Reviews)
            .render(&t, &[&d], &RenderLimits::default())
            .unwrap();
        assert!(r.text.contains("{target_text} here"));
        assert!(r.text.contains("uses {candidates} literally"));
    }

    #[test]
    fn custom_template_requires_placeholders() {
        assert!(PromptTemplate::from_body("x", "no slots", "").is_err());
        assert!(PromptTemplate::from_body("x", "{target_text} {candidates}", "").is_ok());
    }
}
