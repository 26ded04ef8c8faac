use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;

use super::template::AliasMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseFailure {
    NoRanking,
    UnknownAlias(String),
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseFailure::NoRanking => write!(f, "no ranked alias list found"),
            ParseFailure::UnknownAlias(a) => write!(f, "unknown alias {a:?}"),
        }
    }
}

fn ranking_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)ranking\W*?:(.*)$").expect("valid regex"))
}

fn word() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z]+").expect("valid regex"))
}

fn standalone_alias() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-Z]{1,2}\b").expect("valid regex"))
}

const FILLER: [&str; 4] = ["candidate", "candidates", "text", "doc"];

enum LineParse {
    Aliases(Vec<String>),
    Unknown(String),
    NotAList,
}

fn parse_list(list: &str, aliases: &AliasMap) -> LineParse {
    let mut found = Vec::new();
    for m in word().find_iter(list) {
        let token = m.as_str();
        if FILLER.iter().any(|f| token.eq_ignore_ascii_case(f)) {
            continue;
        }
        if aliases.id_of(token).is_some() {
            found.push(token.to_owned());
        } else if token.len() <= 2 && token.chars().all(|c| c.is_ascii_uppercase()) {
            return LineParse::Unknown(token.to_owned());
        } else {
            return LineParse::NotAList;
        }
    }
    if found.is_empty() {
        LineParse::NotAList
    } else {
        LineParse::Aliases(found)
    }
}

fn resolve(found: impl IntoIterator<Item = String>, aliases: &AliasMap) -> Vec<String> {
    let mut seen = HashSet::new();
    found
        .into_iter()
        .filter(|a| seen.insert(a.clone()))
        .filter_map(|a| aliases.id_of(&a).map(str::to_owned))
        .collect()
}

/// Extracts an ordered list of corpus ids from a model reply.
///
/// Lines of the form `... ranking: X > Y > Z` are tried first, in order; the
/// first one made only of aliases wins, and an unknown alias on such a line
/// fails the parse. Otherwise standalone capital-letter aliases are collected
/// from the whole reply. Repeats keep their first position.
pub fn parse_ranking(raw: &str, aliases: &AliasMap) -> Result<Vec<String>, ParseFailure> {
    for line in raw.lines() {
        let Some(caps) = ranking_line().captures(line) else {
            continue;
        };
        match parse_list(&caps[1], aliases) {
            LineParse::Aliases(found) => return Ok(resolve(found, aliases)),
            LineParse::Unknown(alias) => return Err(ParseFailure::UnknownAlias(alias)),
            LineParse::NotAList => continue,
        }
    }

    let lenient: Vec<String> = standalone_alias()
        .find_iter(raw)
        .map(|m| m.as_str().to_owned())
        .filter(|a| aliases.id_of(a).is_some())
        .collect();
    if lenient.is_empty() {
        return Err(ParseFailure::NoRanking);
    }
    Ok(resolve(lenient, aliases))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(n: usize) -> AliasMap {
        let ids: Vec<String> = (0..n).map(|i| format!("doc{i}")).collect();
        AliasMap::new(ids.iter().map(String::as_str))
    }

    fn ids(v: &[usize]) -> Vec<String> {
        v.iter().map(|i| format!("doc{i}")).collect()
    }

    #[test]
    fn canonical_prose_form() {
        assert_eq!(
            parse_ranking("Most likely: B. Second: D.", &map(5)),
            Ok(ids(&[1, 3]))
        );
    }

    #[test]
    fn duplicates_collapse() {
        assert_eq!(parse_ranking("A A B", &map(3)), Ok(ids(&[0, 1])));
    }

    #[test]
    fn rationale_then_final_ranking() {
        let raw = "Candidate A and candidate C both use semicolons heavily, but E matches \
                   the sign-off.\nFinal ranking: E > A > C";
        assert_eq!(parse_ranking(raw, &map(6)), Ok(ids(&[4, 0, 2])));
    }

    #[test]
    fn comma_separated_machine_line() {
        let raw = "Ranking: C, A, F, B, D, E, G, H, I, J";
        assert_eq!(parse_ranking(raw, &map(10)).unwrap()[..2], ids(&[2, 0])[..]);
    }

    #[test]
    fn markdown_and_candidate_prefixes() {
        let raw = "**RANKING:** Candidate B > Candidate A";
        assert_eq!(parse_ranking(raw, &map(2)), Ok(ids(&[1, 0])));
    }

    #[test]
    fn hallucinated_alias_on_ranking_line_fails() {
        assert_eq!(
            parse_ranking("RANKING: Z > A > B", &map(10)),
            Err(ParseFailure::UnknownAlias("Z".into()))
        );
    }

    #[test]
    fn no_aliases_at_all() {
        assert_eq!(
            parse_ranking("I cannot decide.", &map(3)),
            Err(ParseFailure::NoRanking)
        );
    }

    #[test]
    fn prose_after_ranking_keyword_falls_through() {
        let raw = "My ranking: it is hard to say\nRANKING: B > A";
        assert_eq!(parse_ranking(raw, &map(2)), Ok(ids(&[1, 0])));
    }
}
