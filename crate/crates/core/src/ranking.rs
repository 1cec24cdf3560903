//! DPH and BM25 ranking, Bo1 pseudo-relevance feedback, and query mixing.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{CollectionStats, Document, InvertedIndex};
use crate::text::{PipelineConfig, Term};

/// Bag of weighted terms. Always held in canonical form: sorted by term,
/// duplicates merged by summing weights, zero-weight terms dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    pub qid: String,
    terms: Vec<(Term, f64)>,
}

impl WeightedQuery {
    pub fn new(
        qid: impl Into<String>,
        terms: impl IntoIterator<Item = (Term, f64)>,
    ) -> Result<Self> {
        let mut merged: BTreeMap<Term, f64> = BTreeMap::new();
        for (t, w) in terms {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "bad weight {w} for term `{t}`"
                )));
            }
            *merged.entry(t).or_default() += w;
        }
        Ok(WeightedQuery {
            qid: qid.into(),
            terms: merged.into_iter().filter(|(_, w)| *w > 0.0).collect(),
        })
    }

    /// Every occurrence contributes weight 1, so repeated terms weigh more.
    pub fn from_terms(qid: impl Into<String>, terms: impl IntoIterator<Item = Term>) -> Self {
        Self::new(qid, terms.into_iter().map(|t| (t, 1.0))).expect("unit weights are valid")
    }

    pub fn from_text(qid: impl Into<String>, text: &str, config: &PipelineConfig) -> Self {
        Self::from_terms(qid, config.process(text))
    }

    pub fn terms(&self) -> &[(Term, f64)] {
        &self.terms
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.terms
            .binary_search_by(|(t, _)| t.as_str().cmp(term))
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }
}

/// `q' = q0 + theta * qr`.
pub fn mix_queries(q0: &WeightedQuery, qr: &WeightedQuery, theta: f64) -> Result<WeightedQuery> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "theta must be >= 0, got {theta}"
        )));
    }
    if q0.qid != qr.qid {
        return Err(Error::InvalidArgument(format!(
            "cannot mix queries `{}` and `{}`",
            q0.qid, qr.qid
        )));
    }
    let terms = q0
        .terms
        .iter()
        .cloned()
        .chain(qr.terms.iter().map(|(t, w)| (t.clone(), theta * w)));
    WeightedQuery::new(q0.qid.clone(), terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RankingModel {
    Dph,
    Bm25 { k1: f64, b: f64 },
}

impl RankingModel {
    pub const BM25_DEFAULT: RankingModel = RankingModel::Bm25 { k1: 1.2, b: 0.75 };

    /// Contribution of one term occurrence count to one document, before the
    /// query weight is applied.
    pub fn term_score(&self, stats: &CollectionStats, term: &str, tf: u32, doc_len: u32) -> f64 {
        if tf == 0 || doc_len == 0 {
            return 0.0;
        }
        let ts = stats.term(term);
        if ts.doc_freq == 0 {
            return 0.0;
        }
        let tf = f64::from(tf);
        let len = f64::from(doc_len);
        let n = stats.num_docs() as f64;
        let avgdl = stats.average_doc_length();
        match *self {
            RankingModel::Dph => {
                let f = tf / len;
                let norm = (1.0 - f) * (1.0 - f) / (tf + 1.0);
                let a = (tf * avgdl / len) * (n / ts.coll_freq as f64);
                let b = 2.0 * std::f64::consts::PI * tf * (1.0 - f);
                if a <= 0.0 || b <= 0.0 {
                    return 0.0;
                }
                norm * (tf * a.log2() + 0.5 * b.log2())
            }
            RankingModel::Bm25 { k1, b } => {
                let nt = ts.doc_freq as f64;
                let idf = ((n - nt + 0.5) / (nt + 0.5)).ln().max(0.0);
                idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / avgdl))
            }
        }
    }
}

impl fmt::Display for RankingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingModel::Dph => f.write_str("dph"),
            RankingModel::Bm25 { .. } => f.write_str("bm25"),
        }
    }
}

impl FromStr for RankingModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dph" => Ok(RankingModel::Dph),
            "bm25" => Ok(RankingModel::BM25_DEFAULT),
            _ => Err(Error::InvalidArgument(format!(
                "unknown ranking model `{s}`"
            ))),
        }
    }
}

/// Score a processed document against `query` under `stats`.
pub fn score_document(
    model: RankingModel,
    stats: &CollectionStats,
    query: &WeightedQuery,
    doc: &Document,
) -> f64 {
    let len = doc.len() as u32;
    query
        .terms()
        .iter()
        .map(|(t, w)| {
            let tf = doc.terms.iter().filter(|d| *d == t).count() as u32;
            w * model.term_score(stats, t.as_str(), tf, len)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: String,
    pub entries: Vec<(String, f64)>,
    pub tag: String,
}

impl RankedList {
    pub fn empty(qid: impl Into<String>, tag: impl Into<String>) -> Self {
        RankedList {
            qid: qid.into(),
            entries: Vec::new(),
            tag: tag.into(),
        }
    }

    pub fn docnos(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn by_score_then_docno(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Document-at-a-time retrieval over the union of the query's posting lists.
pub fn retrieve(
    model: RankingModel,
    index: &InvertedIndex,
    query: &WeightedQuery,
    k: usize,
    tag: &str,
) -> RankedList {
    let mut out = RankedList::empty(query.qid.clone(), tag);
    if query.is_empty() || k == 0 {
        return out;
    }
    let stats = index.stats();
    let lists: Vec<_> = query
        .terms()
        .iter()
        .map(|(t, w)| (t.as_str(), *w, index.postings(t.as_str())))
        .collect();
    let mut cursors = vec![0usize; lists.len()];
    let mut scored = Vec::new();
    loop {
        let next = lists
            .iter()
            .zip(&cursors)
            .filter_map(|((_, _, ps), &c)| ps.get(c).map(|p| p.doc))
            .min();
        let Some(doc) = next else { break };
        let len = index.doc(doc).length;
        let mut score = 0.0;
        for ((term, w, ps), c) in lists.iter().zip(cursors.iter_mut()) {
            if let Some(p) = ps.get(*c).filter(|p| p.doc == doc) {
                score += w * model.term_score(stats, term, p.tf, len);
                *c += 1;
            }
        }
        scored.push((index.doc(doc).docno.clone(), score));
    }
    scored.sort_by(by_score_then_docno);
    scored.truncate(k);
    out.entries = scored;
    out
}

pub const BO1_DEFAULT_DOCS: usize = 3;
pub const BO1_DEFAULT_TERMS: usize = 10;

/// Bo1 weight of a candidate term: `tf_x * log2((1 + P_n) / P_n) + log2(1 + P_n)`
/// with `P_n = F_t / N`.
pub fn bo1_weight(tf_feedback: f64, coll_freq: f64, num_docs: f64) -> f64 {
    let pn = coll_freq / num_docs;
    tf_feedback * ((1.0 + pn) / pn).log2() + (1.0 + pn).log2()
}

/// Expand `query` with the top `num_terms` Bo1-weighted terms from the first
/// `num_docs` documents of `initial`. Selected terms receive weight
/// `w / max_w`, added to any weight they already carry.
pub fn bo1_expand(
    index: &InvertedIndex,
    query: &WeightedQuery,
    initial: &RankedList,
    num_docs: usize,
    num_terms: usize,
) -> Result<WeightedQuery> {
    if initial.is_empty() {
        return Err(Error::EmptyInput("initial ranking for Bo1 expansion"));
    }
    let feedback: Vec<u32> = initial
        .docnos()
        .take(num_docs.max(1))
        .map(|d| {
            index
                .doc_id(d)
                .ok_or_else(|| Error::InvalidArgument(format!("docno `{d}` not in index")))
        })
        .collect::<Result<_>>()?;
    let stats = index.stats();
    let n = stats.num_docs() as f64;
    let mut candidates: Vec<(f64, &str)> = Vec::new();
    for (term, postings) in index.terms() {
        let tfx: u64 = feedback
            .iter()
            .filter_map(|d| {
                postings
                    .binary_search_by_key(d, |p| p.doc)
                    .ok()
                    .map(|i| u64::from(postings[i].tf))
            })
            .sum();
        if tfx == 0 {
            continue;
        }
        let cf = stats.term(term).coll_freq as f64;
        candidates.push((bo1_weight(tfx as f64, cf, n), term));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    candidates.truncate(num_terms);
    let max_w = candidates.first().map(|c| c.0).unwrap_or(0.0);
    if max_w <= 0.0 {
        return Ok(query.clone());
    }
    let extra = candidates
        .into_iter()
        .filter_map(|(w, t)| Term::new(t).map(|t| (t, w / max_w)));
    WeightedQuery::new(
        query.qid.clone(),
        query.terms().iter().cloned().chain(extra),
    )
}

/// Optional second-stage re-ranker.
pub trait Reranker {
    fn rerank(&self, query: &WeightedQuery, ranking: RankedList) -> RankedList;
}

/// Passes rankings through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReranker;

impl Reranker for IdentityReranker {
    fn rerank(&self, _query: &WeightedQuery, ranking: RankedList) -> RankedList {
        ranking
    }
}

/// `qid Q0 docno rank score tag`, ranks from 1, scores with 6 decimals.
pub fn write_run<W: Write>(mut w: W, lists: &[RankedList]) -> io::Result<()> {
    for list in lists {
        for (i, (docno, score)) in list.entries.iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {:.6} {}",
                list.qid,
                docno,
                i + 1,
                score,
                list.tag
            )?;
        }
    }
    Ok(())
}

/// Parse a TREC run file. Entries are ordered by their rank column.
pub fn read_run(path: impl AsRef<Path>) -> Result<BTreeMap<String, RankedList>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&text, &path.display().to_string())
}

pub fn parse_run(text: &str, origin: &str) -> Result<BTreeMap<String, RankedList>> {
    let mut rows: BTreeMap<String, (String, Vec<(u64, String, f64)>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            path: origin.to_owned(),
            line: i + 1,
            msg: msg.to_owned(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err("expected 6 fields"));
        }
        let rank: u64 = f[3].parse().map_err(|_| parse_err("bad rank"))?;
        let score: f64 = f[4].parse().map_err(|_| parse_err("bad score"))?;
        let entry = rows
            .entry(f[0].to_owned())
            .or_insert_with(|| (f[5].to_owned(), Vec::new()));
        entry.1.push((rank, f[2].to_owned(), score));
    }
    Ok(rows
        .into_iter()
        .map(|(qid, (tag, mut v))| {
            v.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            let entries = v.into_iter().map(|(_, d, s)| (d, s)).collect();
            (qid.clone(), RankedList { qid, entries, tag })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c4() -> InvertedIndex {
        InvertedIndex::build(
            [
                ("d1", "cat sat mat"),
                ("d2", "cat hat"),
                ("d3", "dog"),
                ("d4", "dog dog run"),
            ],
            &PipelineConfig::raw(),
        )
        .unwrap()
    }

    fn q(qid: &str, terms: &[(&str, f64)]) -> WeightedQuery {
        WeightedQuery::new(qid, terms.iter().map(|(t, w)| (Term::new(*t).unwrap(), *w))).unwrap()
    }

    fn doc(docno: &str, text: &str) -> Document {
        Document {
            docno: docno.into(),
            terms: PipelineConfig::raw().process(text),
        }
    }

    #[test]
    fn canonical_form_merges_and_drops_zero() {
        let wq = q("1", &[("b", 1.0), ("a", 0.5), ("b", 2.0), ("z", 0.0)]);
        assert_eq!(wq.len(), 2);
        assert_eq!(wq.weight("b"), 3.0);
        assert_eq!(wq.weight("a"), 0.5);
        assert_eq!(wq.weight("z"), 0.0);
        assert!(WeightedQuery::new("1", [(Term::new("a").unwrap(), -1.0)]).is_err());
        assert!(WeightedQuery::new("1", [(Term::new("a").unwrap(), f64::NAN)]).is_err());
    }

    #[test]
    fn bm25_tiny_corpus_idf_is_zero() {
        let idx = c4();
        let s = idx.stats();
        let v = score_document(
            RankingModel::BM25_DEFAULT,
            s,
            &q("1", &[("dog", 1.0)]),
            &doc("d4", "dog dog run"),
        );
        assert_eq!(v, 0.0);
        // A rarer term has positive idf.
        let v = score_document(
            RankingModel::BM25_DEFAULT,
            s,
            &q("1", &[("run", 1.0)]),
            &doc("d4", "dog dog run"),
        );
        let idf = (3.5f64 / 1.5).ln();
        let expect = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 3.0 / 2.25));
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn dph_matches_formula_and_clamps() {
        let idx = c4();
        let s = idx.stats();
        let v = RankingModel::Dph.term_score(s, "dog", 2, 3);
        let (tf, len, avgdl, n, ft) = (2.0f64, 3.0f64, 2.25f64, 4.0f64, 3.0f64);
        let f = tf / len;
        let expect = (1.0 - f).powi(2) / (tf + 1.0)
            * (tf * ((tf * avgdl / len) * (n / ft)).log2()
                + 0.5 * (2.0 * std::f64::consts::PI * tf * (1.0 - f)).log2());
        assert!((v - expect).abs() < 1e-12);
        // tf == len makes 1 - f zero: clamped.
        assert_eq!(RankingModel::Dph.term_score(s, "dog", 1, 1), 0.0);
    }

    #[test]
    fn scoring_is_linear_in_weight_and_ignores_absent_terms() {
        let idx = c4();
        let s = idx.stats();
        let d = doc("d1", "cat sat mat");
        for m in [RankingModel::Dph, RankingModel::BM25_DEFAULT] {
            let one = score_document(m, s, &q("1", &[("mat", 1.0)]), &d);
            let two = score_document(m, s, &q("1", &[("mat", 2.0)]), &d);
            assert!((two - 2.0 * one).abs() < 1e-12);
            assert_eq!(score_document(m, s, &q("1", &[("dog", 1.0)]), &d), 0.0);
            assert_eq!(
                score_document(m, s, &q("1", &[("mat", 1.0), ("nope", 3.0)]), &d),
                one
            );
        }
    }

    #[test]
    fn retrieve_candidates_and_truncation() {
        let idx = c4();
        let r = retrieve(RankingModel::Dph, &idx, &q("1", &[("dog", 1.0)]), 10, "t");
        let mut got: Vec<&str> = r.docnos().collect();
        got.sort();
        assert_eq!(got, vec!["d3", "d4"]);
        let r1 = retrieve(RankingModel::Dph, &idx, &q("1", &[("dog", 1.0)]), 1, "t");
        assert_eq!(r1.entries, r.entries[..1].to_vec());
        assert!(retrieve(RankingModel::Dph, &idx, &q("1", &[]), 10, "t").is_empty());
    }

    #[test]
    fn retrieve_agrees_with_score_document() {
        let raw = [
            ("d1", "cat sat mat"),
            ("d2", "cat hat"),
            ("d3", "dog"),
            ("d4", "dog dog run"),
        ];
        let idx = c4();
        let query = q("1", &[("cat", 1.0), ("run", 0.5), ("dog", 2.0)]);
        for m in [RankingModel::Dph, RankingModel::BM25_DEFAULT] {
            let r = retrieve(m, &idx, &query, 10, "t");
            for (docno, score) in &r.entries {
                let text = raw.iter().find(|(d, _)| d == docno).unwrap().1;
                let direct = score_document(m, idx.stats(), &query, &doc(docno, text));
                assert!((score - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ties_break_by_docno() {
        let idx = InvertedIndex::build(
            [("b", "x y"), ("a", "x y"), ("c", "x z")],
            &PipelineConfig::raw(),
        )
        .unwrap();
        let r = retrieve(
            RankingModel::BM25_DEFAULT,
            &idx,
            &q("1", &[("y", 1.0)]),
            10,
            "t",
        );
        assert_eq!(r.docnos().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn bo1_example_weight() {
        let w = bo1_weight(1.0, 1.0, 4.0);
        assert!((w - (5f64.log2() + 1.25f64.log2())).abs() < 1e-12);
        assert!((w - 2.643_856).abs() < 1e-6);
        assert!(bo1_weight(2.0, 1.0, 4.0) > w);
    }

    #[test]
    fn bo1_expansion_uses_feedback_docs_only() {
        let idx = c4();
        let initial = RankedList {
            qid: "1".into(),
            entries: vec![("d4".into(), 1.0), ("d3".into(), 0.5)],
            tag: "t".into(),
        };
        let query = q("1", &[("dog", 1.0)]);
        let ex = bo1_expand(&idx, &query, &initial, 1, 10).unwrap();
        // Only terms from d4 are candidates.
        let terms: Vec<&str> = ex.terms().iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(terms, vec!["dog", "run"]);
        let w_dog = bo1_weight(2.0, 3.0, 4.0);
        let w_run = bo1_weight(1.0, 1.0, 4.0);
        let max = w_dog.max(w_run);
        assert!((ex.weight("dog") - (1.0 + w_dog / max)).abs() < 1e-12);
        assert!((ex.weight("run") - w_run / max).abs() < 1e-12);

        let empty = RankedList::empty("1", "t");
        assert!(bo1_expand(&idx, &query, &empty, 3, 10).is_err());
    }

    #[test]
    fn mixing() {
        let q0 = q("1", &[("cat", 1.0)]);
        let qr = q("1", &[("cat", 1.0), ("dog", 1.0)]);
        let m = mix_queries(&q0, &qr, 0.5).unwrap();
        assert_eq!(m.weight("cat"), 1.5);
        assert_eq!(m.weight("dog"), 0.5);
        assert_eq!(mix_queries(&q0, &qr, 0.0).unwrap(), q0);
        assert_eq!(mix_queries(&q0, &q("1", &[]), 0.7).unwrap(), q0);
        assert!(mix_queries(&q0, &qr, -0.1).is_err());
        assert!(mix_queries(&q0, &q("2", &[]), 0.1).is_err());
    }

    #[test]
    fn run_file_round_trip() {
        let idx = c4();
        let r = retrieve(
            RankingModel::Dph,
            &idx,
            &q("7", &[("dog", 1.0), ("cat", 1.0)]),
            10,
            "dph",
        );
        let mut buf = Vec::new();
        write_run(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("7 Q0 "));
        assert!(first.contains(" 1 "));
        let parsed = parse_run(&text, "mem").unwrap();
        let back = &parsed["7"];
        assert_eq!(
            back.docnos().collect::<Vec<_>>(),
            r.docnos().collect::<Vec<_>>()
        );
        assert!(parse_run("1 Q0 d 1 x t\n", "mem").is_err());
    }
}
