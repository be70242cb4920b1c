//! Error-message normalization and trace-file augmentation.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOPWORDS_FILE: &str = include_str!("../data/stopwords_en.txt");

/// The committed English stopword list, one token per line.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_FILE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Tokens mixing letters and digits are generated names (temp tables and
/// the like) and never survive normalization.
pub fn is_temporary_name(token: &str) -> bool {
    let letters = token.bytes().any(|b| b.is_ascii_alphabetic());
    let digits = token.bytes().any(|b| b.is_ascii_digit());
    letters && digits
}

/// Normalized message tokens, in message order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenList(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Space-joined text; normalizing it again yields the same list.
    pub fn to_text(&self) -> String {
        self.0.join(" ")
    }
}

impl<S: Into<String>> FromIterator<S> for TokenList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenList(iter.into_iter().map(Into::into).collect())
    }
}

/// Kept tokens with the byte offset just past each one in the source text.
fn kept_tokens(text: &str) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, end: usize, out: &mut Vec<(String, usize)>| {
        if current.is_empty() {
            return;
        }
        let token = std::mem::take(current);
        if !is_stopword(&token) && !is_temporary_name(&token) {
            out.push((token, end));
        }
    };
    let mut last_end = 0;
    for (pos, ch) in text.char_indices() {
        let end = pos + ch.len_utf8();
        for lc in ch.to_lowercase() {
            if lc.is_ascii_alphanumeric() {
                current.push(lc);
            } else {
                flush(&mut current, last_end, &mut out);
            }
        }
        if !current.is_empty() {
            last_end = end;
        }
    }
    flush(&mut current, last_end, &mut out);
    out
}

/// Lowercases, splits on every non-alphanumeric character (underscore
/// included), drops stopwords and mixed letter/digit tokens. Pure numbers
/// are kept.
pub fn normalize_message(text: &str) -> TokenList {
    TokenList(kept_tokens(text).into_iter().map(|(t, _)| t).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTraceRules {
    line_patterns: Vec<String>,
    #[serde(default = "default_max_appended_tokens")]
    max_appended_tokens: usize,
}

fn default_max_appended_tokens() -> usize {
    32
}

/// Which trace lines are appended to the error message. Patterns are
/// regular expressions (plain text matches literally unless it contains
/// regex metacharacters) and are compiled once at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTraceRules", into = "RawTraceRules")]
pub struct TraceExtractionRules {
    patterns: Vec<String>,
    compiled: Vec<Regex>,
    max_appended_tokens: usize,
}

impl PartialEq for TraceExtractionRules {
    fn eq(&self, other: &Self) -> bool {
        self.patterns == other.patterns && self.max_appended_tokens == other.max_appended_tokens
    }
}

impl TryFrom<RawTraceRules> for TraceExtractionRules {
    type Error = Error;

    fn try_from(raw: RawTraceRules) -> Result<Self> {
        TraceExtractionRules::new(raw.line_patterns, raw.max_appended_tokens)
    }
}

impl From<TraceExtractionRules> for RawTraceRules {
    fn from(r: TraceExtractionRules) -> Self {
        RawTraceRules {
            line_patterns: r.patterns,
            max_appended_tokens: r.max_appended_tokens,
        }
    }
}

impl TraceExtractionRules {
    pub fn new<S: Into<String>>(
        patterns: impl IntoIterator<Item = S>,
        max_appended_tokens: usize,
    ) -> Result<Self> {
        let patterns: Vec<String> = patterns.into_iter().map(Into::into).collect();
        if patterns.is_empty() {
            return Err(Error::Config(
                "trace_rules.line_patterns needs at least one pattern".into(),
            ));
        }
        if max_appended_tokens == 0 {
            return Err(Error::Config(
                "trace_rules.max_appended_tokens must be positive".into(),
            ));
        }
        let compiled = patterns
            .iter()
            .map(|p| {
                Regex::new(p)
                    .map_err(|e| Error::Config(format!("trace_rules pattern `{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceExtractionRules {
            patterns,
            compiled,
            max_appended_tokens,
        })
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn max_appended_tokens(&self) -> usize {
        self.max_appended_tokens
    }

    fn matches(&self, line: &str) -> bool {
        self.compiled.iter().any(|re| re.is_match(line))
    }
}

impl Default for TraceExtractionRules {
    fn default() -> Self {
        TraceExtractionRules::new(["(?i)assertion failed"], default_max_appended_tokens())
            .expect("default trace rules compile")
    }
}

/// Appends the trace lines selected by `rules` to `message`.
///
/// Matching lines are joined in file order and cut after the
/// `max_appended_tokens`-th token that survives normalization. With no
/// matching line the message is returned unchanged.
pub fn augment_with_trace(message: &str, trace: &str, rules: &TraceExtractionRules) -> String {
    let selected: Vec<&str> = trace
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && rules.matches(l))
        .collect();
    if selected.is_empty() {
        return message.to_owned();
    }
    let mut extract = selected.join(" ");
    let kept = kept_tokens(&extract);
    if kept.len() > rules.max_appended_tokens {
        let cut = kept[rules.max_appended_tokens - 1].1;
        extract.truncate(cut);
    }
    if message.is_empty() {
        extract
    } else {
        format!("{message} {extract}")
    }
}
