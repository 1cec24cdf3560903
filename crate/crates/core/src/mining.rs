//! Paraphrase pair mining from shared relevant documents.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Graded relevance judgments keyed by qid then docno.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, i32>>,
}

impl Qrels {
    /// Later rows for the same `(qid, docno)` replace earlier ones.
    pub fn from_rows<I, Q, D>(rows: I) -> Self
    where
        I: IntoIterator<Item = (Q, D, i32)>,
        Q: Into<String>,
        D: Into<String>,
    {
        let mut q = Qrels::default();
        for (qid, docno, grade) in rows {
            q.insert(qid, docno, grade);
        }
        q
    }

    pub fn insert(&mut self, qid: impl Into<String>, docno: impl Into<String>, grade: i32) {
        self.judgments
            .entry(qid.into())
            .or_default()
            .insert(docno.into(), grade);
    }

    pub fn grade(&self, qid: &str, docno: &str) -> Option<i32> {
        self.judgments.get(qid)?.get(docno).copied()
    }

    pub fn for_query(&self, qid: &str) -> Option<&BTreeMap<String, i32>> {
        self.judgments.get(qid)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, i32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// TREC qrels: `qid iter docno grade`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut q = Qrels::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let grade = match f.as_slice() {
                [_, _, _, g] => g.parse::<i32>().ok().filter(|g| *g >= 0),
                _ => None,
            };
            let Some(grade) = grade else {
                return Err(Error::Parse {
                    path: origin.to_owned(),
                    line: i + 1,
                    msg: "expected `qid 0 docno grade` with grade >= 0".into(),
                });
            };
            q.insert(f[0], f[2], grade);
        }
        Ok(q)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryPair {
    pub source_qid: String,
    pub target_qid: String,
    pub source_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedPairs {
    /// Ordered pairs, both directions, sorted by `(source_qid, target_qid)`.
    pub pairs: Vec<QueryPair>,
    /// Qids judged relevant somewhere but missing from the query texts.
    pub missing_qids: Vec<String>,
}

impl MinedPairs {
    pub fn unordered_count(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.source_qid < p.target_qid)
            .count()
    }
}

/// Every ordered pair of distinct queries sharing a document with grade >= 1.
pub fn mine_pairs(qrels: &Qrels, queries: &HashMap<String, String>) -> MinedPairs {
    let mut by_doc: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for (qid, docno, grade) in qrels.iter() {
        if grade < 1 {
            continue;
        }
        if !queries.contains_key(qid) {
            missing.insert(qid.to_owned());
            continue;
        }
        by_doc.entry(docno).or_default().insert(qid);
    }
    let mut ordered: BTreeSet<(&str, &str)> = BTreeSet::new();
    for qids in by_doc.values() {
        for a in qids {
            for b in qids {
                if a != b {
                    ordered.insert((a, b));
                }
            }
        }
    }
    let pairs = ordered
        .into_iter()
        .map(|(a, b)| QueryPair {
            source_qid: a.to_owned(),
            target_qid: b.to_owned(),
            source_text: queries[a].clone(),
            target_text: queries[b].clone(),
        })
        .collect();
    MinedPairs {
        pairs,
        missing_qids: missing.into_iter().collect(),
    }
}

/// Shuffle with a seeded RNG and cut at `round(fraction * len)`.
pub fn split_pairs(
    pairs: &[QueryPair],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<QueryPair>, Vec<QueryPair>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("pairs to split"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * pairs.len() as f64).round() as usize;
    let valid = shuffled.split_off(cut.min(pairs.len()));
    Ok((shuffled, valid))
}

/// `src_qid<TAB>tgt_qid<TAB>src_text<TAB>tgt_text`.
pub fn write_pairs<W: Write>(mut w: W, pairs: &[QueryPair]) -> io::Result<()> {
    for p in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            p.source_qid,
            p.target_qid,
            one_line(&p.source_text),
            one_line(&p.target_text)
        )?;
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<QueryPair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected 4 tab-separated fields".into(),
                });
            }
            Ok(QueryPair {
                source_qid: f[0].into(),
                target_qid: f[1].into(),
                source_text: f[2].into(),
                target_text: f[3].into(),
            })
        })
        .collect()
}

/// `qid<TAB>text` query files.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(q, t)| (q.trim().to_owned(), t.to_owned()))
                .ok_or_else(|| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected `qid<TAB>text`".into(),
                })
        })
        .collect()
}
