//! Pre-retrieval query performance predictors.
//!
//! All predictors use the natural logarithm. Query terms unseen in the
//! collection are skipped rather than zero-filled; `num_scored_terms` on the
//! returned score reports how many terms contributed. Terms are visited in
//! sorted order so that permuted queries produce bit-identical values.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::CollectionStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PredictorKind {
    AvgIdf,
    AvgIctf,
    Scs,
    AvgScq,
    MaxScq,
    SumScq,
    QueryLength,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 7] = [
        PredictorKind::AvgIdf,
        PredictorKind::AvgIctf,
        PredictorKind::Scs,
        PredictorKind::AvgScq,
        PredictorKind::MaxScq,
        PredictorKind::SumScq,
        PredictorKind::QueryLength,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::AvgIdf => "AvgIDF",
            PredictorKind::AvgIctf => "AvgICTF",
            PredictorKind::Scs => "SCS",
            PredictorKind::AvgScq => "AvgSCQ",
            PredictorKind::MaxScq => "MaxSCQ",
            PredictorKind::SumScq => "SumSCQ",
            PredictorKind::QueryLength => "QueryLength",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QppScore {
    pub kind: PredictorKind,
    pub value: f64,
    pub num_scored_terms: usize,
}

/// Logarithm used inside the predictors. Only `Natural` is used in
/// production; `Two` exists to check that rank-based evaluation does not
/// depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

/// `ln(N / N_t)`, or `None` when the term does not occur.
pub fn term_idf(stats: &CollectionStats, term: &str) -> Result<Option<f64>> {
    idf_in(stats, term, LogBase::Natural)
}

/// `ln(|D| / F_t)`, or `None` when the term does not occur.
pub fn term_ictf(stats: &CollectionStats, term: &str) -> Result<Option<f64>> {
    ictf_in(stats, term, LogBase::Natural)
}

/// `(1 + ln F_t) * idf(t)`, or `None` when the term does not occur.
pub fn term_scq(stats: &CollectionStats, term: &str) -> Result<Option<f64>> {
    scq_in(stats, term, LogBase::Natural)
}

fn idf_in(stats: &CollectionStats, term: &str, base: LogBase) -> Result<Option<f64>> {
    if stats.num_docs() == 0 {
        return Err(Error::EmptyCollection("idf needs N > 0"));
    }
    let nt = stats.term(term).doc_freq;
    Ok((nt > 0).then(|| base.log(stats.num_docs() as f64 / nt as f64)))
}

fn ictf_in(stats: &CollectionStats, term: &str, base: LogBase) -> Result<Option<f64>> {
    if stats.total_terms() == 0 {
        return Err(Error::EmptyCollection("ictf needs |D| > 0"));
    }
    let ft = stats.term(term).coll_freq;
    Ok((ft > 0).then(|| base.log(stats.total_terms() as f64 / ft as f64)))
}

fn scq_in(stats: &CollectionStats, term: &str, base: LogBase) -> Result<Option<f64>> {
    let ft = stats.term(term).coll_freq;
    Ok(idf_in(stats, term, base)?.map(|idf| (1.0 + base.log(ft as f64)) * idf))
}

/// Compute one predictor for a processed query.
pub fn predict<S: AsRef<str>>(
    stats: &CollectionStats,
    query: &[S],
    kind: PredictorKind,
) -> Result<QppScore> {
    predict_in_base(stats, query, kind, LogBase::Natural)
}

pub fn predict_in_base<S: AsRef<str>>(
    stats: &CollectionStats,
    query: &[S],
    kind: PredictorKind,
    base: LogBase,
) -> Result<QppScore> {
    if kind == PredictorKind::QueryLength {
        return Ok(QppScore {
            kind,
            value: query.len() as f64,
            num_scored_terms: query.len(),
        });
    }
    if query.is_empty() {
        return Err(Error::EmptyInput("query for pre-retrieval predictor"));
    }
    let mut sorted: Vec<&str> = query.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();

    if kind == PredictorKind::Scs {
        return scs(stats, &sorted, base);
    }

    let per_term = |t: &str| match kind {
        PredictorKind::AvgIdf => idf_in(stats, t, base),
        PredictorKind::AvgIctf => ictf_in(stats, t, base),
        _ => scq_in(stats, t, base),
    };
    let mut scores = Vec::with_capacity(sorted.len());
    for t in &sorted {
        if let Some(s) = per_term(t)? {
            scores.push(s);
        }
    }
    let n = scores.len();
    let value = if n == 0 {
        0.0
    } else {
        match kind {
            PredictorKind::MaxScq => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            PredictorKind::SumScq => scores.iter().sum(),
            _ => scores.iter().sum::<f64>() / n as f64,
        }
    };
    Ok(QppScore {
        kind,
        value,
        num_scored_terms: n,
    })
}

/// Simplified clarity score over distinct query terms, `Pr(t|q) = tf(t,q)/|q|`.
fn scs(stats: &CollectionStats, sorted: &[&str], base: LogBase) -> Result<QppScore> {
    if stats.total_terms() == 0 {
        return Err(Error::EmptyCollection("SCS needs |D| > 0"));
    }
    let mut qtf: BTreeMap<&str, usize> = BTreeMap::new();
    for t in sorted {
        *qtf.entry(t).or_default() += 1;
    }
    let qlen = sorted.len() as f64;
    let total = stats.total_terms() as f64;
    let mut value = 0.0;
    let mut scored = 0;
    for (t, tf) in qtf {
        let ft = stats.term(t).coll_freq;
        if ft == 0 {
            continue;
        }
        let p_q = tf as f64 / qlen;
        let p_d = ft as f64 / total;
        value += p_q * base.log(p_q / p_d);
        scored += tf;
    }
    Ok(QppScore {
        kind: PredictorKind::Scs,
        value,
        num_scored_terms: scored,
    })
}

/// Min-max range used to map a raw predictor value into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kind: PredictorKind,
    pub min: f64,
    pub max: f64,
}

impl Calibration {
    pub fn new(kind: PredictorKind, min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::InvalidArgument(
                "calibration bounds must be finite".into(),
            ));
        }
        if min >= max {
            return Err(Error::DegenerateCalibration {
                kind: kind.to_string(),
                value: min,
            });
        }
        Ok(Calibration { kind, min, max })
    }

    /// Fit from the predictor values of a reference query set. Queries whose
    /// predictor cannot be computed (empty after processing) are ignored.
    pub fn fit<Q, S>(stats: &CollectionStats, queries: Q, kind: PredictorKind) -> Result<Self>
    where
        Q: IntoIterator,
        Q::Item: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for q in queries {
            let q = q.as_ref();
            if q.is_empty() && kind != PredictorKind::QueryLength {
                continue;
            }
            let v = predict(stats, q, kind)?.value;
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(Error::EmptyInput("calibration query set"));
        }
        Self::new(kind, min, max)
    }

    pub fn normalize(&self, value: f64) -> f64 {
        ((value - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// `clamp((value - min) / (max - min), 0, 1)`.
pub fn normalize_score(score: &QppScore, calibration: &Calibration) -> f64 {
    calibration.normalize(score.value)
}
