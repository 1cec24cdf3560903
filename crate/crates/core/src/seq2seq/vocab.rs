use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::QueryPair;
use crate::text::tokenize;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    min_frequency: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_frequency: usize,
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_tokens(r.tokens, r.min_frequency)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            min_frequency: v.min_frequency,
            tokens: v.tokens,
        }
    }
}

/// A source sequence mapped into the model vocabulary, plus the extended ids
/// that let out-of-vocabulary source tokens be copied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSource {
    /// Vocabulary ids, OOV tokens mapped to UNK. Fed to the encoder.
    pub ids: Vec<u32>,
    /// Same positions, OOV tokens given `vocab_len + k` for the k-th distinct OOV.
    pub ext: Vec<u32>,
    pub oov: Vec<String>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Vocabulary {
    /// Reserved tokens first, then every token seen at least `min_frequency`
    /// times on either side of the pairs, by descending frequency then text.
    pub fn build(pairs: &[QueryPair], min_frequency: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("pairs for vocabulary"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for p in pairs {
            for t in tokenize(&p.source_text)
                .into_iter()
                .chain(tokenize(&p.target_text))
            {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_frequency.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Vocabulary::from_tokens(tokens, min_frequency)
    }

    pub fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Checkpoint(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Checkpoint(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        Ok(Vocabulary {
            tokens,
            ids,
            min_frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_source<S: AsRef<str>>(&self, tokens: &[S]) -> EncodedSource {
        let v = self.len() as u32;
        let mut oov: Vec<String> = Vec::new();
        let mut ids = Vec::with_capacity(tokens.len());
        let mut ext = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            match self.id(t) {
                Some(id) => {
                    ids.push(id);
                    ext.push(id);
                }
                None => {
                    let k = match oov.iter().position(|o| o == t) {
                        Some(k) => k,
                        None => {
                            oov.push(t.to_owned());
                            oov.len() - 1
                        }
                    };
                    ids.push(UNK);
                    ext.push(v + k as u32);
                }
            }
        }
        EncodedSource { ids, ext, oov }
    }

    /// Target ids over the extended vocabulary of `source`, terminated by EOS.
    pub fn encode_target<S: AsRef<str>>(&self, tokens: &[S], source: &EncodedSource) -> Vec<u32> {
        let v = self.len() as u32;
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.id(t).unwrap_or_else(|| {
                    source
                        .oov
                        .iter()
                        .position(|o| o == t)
                        .map_or(UNK, |k| v + k as u32)
                })
            })
            .chain(std::iter::once(EOS))
            .collect()
    }

    /// Surface form of an extended id; `None` past the source OOV range.
    pub fn surface<'a>(&'a self, id: u32, source: &'a EncodedSource) -> Option<&'a str> {
        match self.token(id) {
            Some(t) => Some(t),
            None => source.oov.get(id as usize - self.len()).map(String::as_str),
        }
    }

    /// Decoded ids to tokens, stopping at EOS and skipping BOS.
    pub fn decode(&self, ids: &[u32], source: &EncodedSource) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS)
            .map(|&i| self.surface(i, source).unwrap_or(UNK_TOKEN).to_owned())
            .collect()
    }
}
