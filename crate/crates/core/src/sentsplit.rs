//! Moses-style sentence splitting adapted to informal web text.
//!
//! Differences from the classic splitter:
//! - every newline is a boundary;
//! - a sentence may start with a lowercase letter;
//! - `:` and `;` split only when both sides keep at least [`HINT_MIN_WORDS`] words.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

/// Minimum words on each side of a `:`/`;` hint for it to become a boundary.
pub const HINT_MIN_WORDS: usize = 4;

const BUNDLED_EN: &str = include_str!("../data/prefixes/en.txt");
const BUNDLED_DE: &str = include_str!("../data/prefixes/de.txt");
const BUNDLED_CUSTOM: &str = include_str!("../data/prefixes/custom.txt");

#[derive(Debug, Error)]
#[error("cannot read prefix file {path}: {source}")]
pub struct PrefixLoadError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

/// Non-breaking prefixes, stored without their trailing period.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrefixTable {
    entries: HashSet<String>,
    numeric_only: HashSet<String>,
}

impl PrefixTable {
    /// English + German + local additions.
    pub fn bundled() -> Self {
        let mut t = PrefixTable::default();
        for src in [BUNDLED_EN, BUNDLED_DE, BUNDLED_CUSTOM] {
            t.merge_str(src);
        }
        t
    }

    /// Adds the contents of one Moses nonbreaking-prefix file.
    /// A plain entry wins over a `#NUMERIC_ONLY#` entry for the same prefix.
    pub fn merge_str(&mut self, src: &str) {
        for line in src.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, numeric) = match line.split_once("#NUMERIC_ONLY#") {
                Some((w, _)) => (w.trim(), true),
                None => (line.split('#').next().unwrap_or("").trim(), false),
            };
            let word = word.trim_end_matches('.');
            if word.is_empty() {
                continue;
            }
            let fresh = self.entries.insert(word.to_owned());
            if numeric {
                if fresh {
                    self.numeric_only.insert(word.to_owned());
                }
            } else {
                self.numeric_only.remove(word);
            }
        }
    }

    pub fn contains(&self, prefix: &str) -> bool {
        self.entries.contains(prefix)
    }

    pub fn is_numeric_only(&self, prefix: &str) -> bool {
        self.numeric_only.contains(prefix)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Union of the given prefix files.
pub fn load_prefixes<P: AsRef<Path>>(paths: &[P]) -> Result<PrefixTable, PrefixLoadError> {
    let mut t = PrefixTable::default();
    for p in paths {
        let p = p.as_ref();
        let src = std::fs::read_to_string(p).map_err(|source| PrefixLoadError {
            path: p.display().to_string(),
            source,
        })?;
        t.merge_str(&src);
    }
    Ok(t)
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '»' | '›' | '”' | '’' | '“' | '%')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '¿' | '¡' | '«' | '‹' | '„' | '“' | '‘')
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

/// Does `next` start with a letter or digit once leading quotes/brackets are skipped?
fn starts_like_sentence(next: &str) -> bool {
    next.chars()
        .find(|c| !is_opening(*c))
        .is_some_and(char::is_alphanumeric)
}

fn starts_with_letter(next: &str) -> bool {
    next.chars().find(|c| !is_opening(*c)).is_some_and(char::is_alphabetic)
}

/// `U.S.`-style uppercase acronym ending.
fn is_upper_acronym(word: &str) -> bool {
    let body = word.trim_end_matches('.');
    if body.len() == word.len() {
        return false;
    }
    match body.rfind('.') {
        Some(dot) => {
            let tail = &body[dot + 1..];
            !tail.is_empty() && tail.chars().all(|c| c.is_uppercase() || c == '-')
        }
        None => false,
    }
}

fn is_prefix_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.' || c == '-'
}

fn hard_boundary(word: &str, next: &str, prefixes: &PrefixTable) -> bool {
    let core = word.trim_end_matches(is_closing);
    let trailing_closers = core.len() != word.len();
    let run: String = {
        let mut r: Vec<char> = core.chars().rev().take_while(|c| is_terminal(*c)).collect();
        r.reverse();
        r.into_iter().collect()
    };
    if run.is_empty() {
        return false;
    }
    if run.contains('!') || run.contains('?') {
        return true;
    }
    if run != "." {
        // ellipsis
        return starts_with_letter(next);
    }
    if trailing_closers {
        return starts_like_sentence(next);
    }
    let body = &core[..core.len() - 1];
    let before_punct = body.trim_end_matches(is_closing);
    let starting_punct = before_punct.len() != body.len();
    let prefix_start = before_punct
        .char_indices()
        .rev()
        .take_while(|(_, c)| is_prefix_char(*c))
        .last()
        .map(|(i, _)| i)
        .unwrap_or(before_punct.len());
    let prefix = &before_punct[prefix_start..];

    if !prefix.is_empty() && prefixes.contains(prefix) && !prefixes.is_numeric_only(prefix) && !starting_punct {
        return false;
    }
    if is_upper_acronym(word) {
        return false;
    }
    if starts_like_sentence(next) {
        let numeric_exception = !prefix.is_empty()
            && prefixes.is_numeric_only(prefix)
            && !starting_punct
            && next.starts_with(|c: char| c.is_ascii_digit());
        return !numeric_exception;
    }
    false
}

fn is_hint(word: &str) -> bool {
    word.ends_with(':') || word.ends_with(';')
}

/// Splits normalized text into sentences. Output segments re-joined with single
/// spaces reproduce the whitespace-collapsed input.
pub fn split_sentences(text: &str, prefixes: &PrefixTable) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.split('\n') {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let mut start = 0;
        for i in 0..words.len() {
            let last = i + 1 == words.len();
            if last || hard_boundary(words[i], words[i + 1], prefixes) {
                split_hints(&words[start..=i], &mut out);
                start = i + 1;
            }
        }
    }
    out
}

fn split_hints(segment: &[&str], out: &mut Vec<String>) {
    let mut start = 0;
    for i in 0..segment.len().saturating_sub(1) {
        if is_hint(segment[i]) && i + 1 - start >= HINT_MIN_WORDS && segment.len() - (i + 1) >= HINT_MIN_WORDS {
            out.push(segment[start..=i].join(" "));
            start = i + 1;
        }
    }
    out.push(segment[start..].join(" "));
}
