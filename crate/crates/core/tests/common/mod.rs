#![allow(dead_code)]

use drqr::index::Document;
use drqr::qpp::PredictorKind;
use drqr::text::Term;
use rand::Rng;

pub fn term(s: &str) -> Term {
    Term::new(s).unwrap()
}

/// Up to `max_docs` documents of 1..=30 tokens drawn from `t0..t{vocab-1}`.
pub fn random_corpus<R: Rng>(rng: &mut R, max_docs: usize, vocab: usize) -> Vec<Document> {
    let n = rng.gen_range(1..=max_docs);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=30);
            Document {
                docno: format!("d{i:03}"),
                terms: (0..len)
                    .map(|_| term(&format!("t{}", rng.gen_range(0..vocab))))
                    .collect(),
            }
        })
        .collect()
}

/// Predictor values recomputed by scanning raw tokens, with none of the
/// library's bookkeeping.
pub fn oracle_predict(docs: &[Document], query: &[String], kind: PredictorKind) -> f64 {
    if kind == PredictorKind::QueryLength {
        return query.len() as f64;
    }
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|d| d.terms.len()).sum();
    let df = |t: &str| {
        docs.iter()
            .filter(|d| d.terms.iter().any(|x| x.as_str() == t))
            .count()
    };
    let cf = |t: &str| {
        docs.iter()
            .flat_map(|d| d.terms.iter())
            .filter(|x| x.as_str() == t)
            .count()
    };
    if kind == PredictorKind::Scs {
        let mut v = 0.0;
        let mut seen: Vec<&str> = Vec::new();
        for t in query {
            if seen.contains(&t.as_str()) {
                continue;
            }
            seen.push(t);
            let f = cf(t);
            if f == 0 {
                continue;
            }
            let pq = query.iter().filter(|x| *x == t).count() as f64 / query.len() as f64;
            v += pq * (pq / (f as f64 / total as f64)).ln();
        }
        return v;
    }
    let mut scores = Vec::new();
    for t in query {
        let (d, f) = (df(t), cf(t));
        if d == 0 {
            continue;
        }
        let idf = (n / d as f64).ln();
        scores.push(match kind {
            PredictorKind::AvgIdf => idf,
            PredictorKind::AvgIctf => (total as f64 / f as f64).ln(),
            _ => (1.0 + (f as f64).ln()) * idf,
        });
    }
    if scores.is_empty() {
        return 0.0;
    }
    match kind {
        PredictorKind::MaxScq => scores.iter().cloned().fold(f64::MIN, f64::max),
        PredictorKind::SumScq => scores.iter().sum(),
        _ => scores.iter().sum::<f64>() / scores.len() as f64,
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}
