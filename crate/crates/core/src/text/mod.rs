//! Text pipeline: tokenize, lowercase, drop stopwords, Porter-stem.

pub mod porter;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// A processed index/query term. Never empty, never contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term(String);

impl Term {
    /// Returns `None` for empty strings or strings containing whitespace.
    pub fn new(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            None
        } else {
            Some(Term(text))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Term {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub lowercase: bool,
    stopwords: Arc<HashSet<String>>,
    pub stem: bool,
}

impl Default for PipelineConfig {
    /// Lowercase, the bundled stopword list, and Porter stemming.
    fn default() -> Self {
        PipelineConfig {
            lowercase: true,
            stopwords: Arc::new(parse_stopwords(DEFAULT_STOPWORDS)),
            stem: true,
        }
    }
}

impl PipelineConfig {
    pub fn new(lowercase: bool, stopwords: HashSet<String>, stem: bool) -> Self {
        PipelineConfig {
            lowercase,
            stopwords: Arc::new(stopwords),
            stem,
        }
    }

    /// Lowercase only: no stopwords, no stemming.
    pub fn raw() -> Self {
        Self::new(true, HashSet::new(), false)
    }

    pub fn with_stopword_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.stopwords = Arc::new(parse_stopwords(&text));
        Ok(self)
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Split on non-alphanumerics, optionally lowercasing.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|s| !s.is_empty())
            .map(|s| {
                if self.lowercase {
                    s.to_lowercase()
                } else {
                    s.to_owned()
                }
            })
            .collect()
    }

    /// tokenize → stopword filter → stem.
    pub fn process(&self, text: &str) -> Vec<Term> {
        self.process_tokens(self.tokenize(text))
    }

    /// Stopword-filter and stem tokens that were already split.
    pub fn process_tokens<I, S>(&self, tokens: I) -> Vec<Term>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        tokens
            .into_iter()
            .filter(|t| !self.stopwords.contains(t.as_ref()))
            .filter_map(|t| {
                let t = t.as_ref();
                let out = if self.stem {
                    porter::stem(t)
                } else {
                    t.to_owned()
                };
                Term::new(out)
            })
            .collect()
    }
}

/// Default tokenizer: split on non-alphanumerics and lowercase.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// One token per line; blank lines and surrounding whitespace ignored.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}
