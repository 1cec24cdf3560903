//! Retrieval effectiveness, rank correlation and significance tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mining::Qrels;
use crate::qpp::PredictorKind;
use crate::ranking::RankedList;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
/// Largest sample size for which permutation tests enumerate all orderings.
pub const EXACT_PERMUTATION_LIMIT: usize = 8;

/// A per-query metric value. `flagged` marks values defined by convention
/// (no relevant documents judged for the query).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub flagged: bool,
}

/// Average precision over the top `cutoff` entries; relevant means grade >= 1.
pub fn average_precision(ranking: &RankedList, qrels: &Qrels, cutoff: usize) -> MetricValue {
    let judged = qrels.for_query(&ranking.qid);
    let num_rel = judged.map_or(0, |j| j.values().filter(|g| **g >= 1).count());
    if num_rel == 0 {
        return MetricValue {
            value: 0.0,
            flagged: true,
        };
    }
    let judged = judged.unwrap();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, docno) in ranking.docnos().take(cutoff).enumerate() {
        if judged.get(docno).is_some_and(|g| *g >= 1) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    MetricValue {
        value: sum / num_rel as f64,
        flagged: false,
    }
}

fn gain(grade: i32) -> f64 {
    if grade <= 0 {
        0.0
    } else {
        2f64.powi(grade) - 1.0
    }
}

/// NDCG@k with gain `2^grade - 1` and discount `1 / log2(rank + 1)`.
pub fn ndcg_at_k(ranking: &RankedList, qrels: &Qrels, k: usize) -> MetricValue {
    let Some(judged) = qrels.for_query(&ranking.qid) else {
        return MetricValue {
            value: 0.0,
            flagged: true,
        };
    };
    let mut ideal: Vec<i32> = judged.values().copied().filter(|g| *g > 0).collect();
    if ideal.is_empty() {
        return MetricValue {
            value: 0.0,
            flagged: true,
        };
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .docnos()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d).copied().unwrap_or(0)) * discount(i))
        .sum();
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(*g) * discount(i))
        .sum();
    MetricValue {
        value: dcg / idcg,
        flagged: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Map,
    NdcgAt10,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Map => "map",
            Metric::NdcgAt10 => "ndcg@10",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "map" | "ap" => Ok(Metric::Map),
            "ndcg@10" | "ndcg_cut_10" | "ndcg" => Ok(Metric::NdcgAt10),
            _ => Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        }
    }

    pub fn per_query(self, ranking: &RankedList, qrels: &Qrels) -> MetricValue {
        match self {
            Metric::Map => average_precision(ranking, qrels, 1000),
            Metric::NdcgAt10 => ndcg_at_k(ranking, qrels, 10),
        }
    }
}

/// Per-query values for every ranked query, keyed by qid.
pub fn evaluate_run(
    run: &BTreeMap<String, RankedList>,
    qrels: &Qrels,
    metric: Metric,
) -> BTreeMap<String, MetricValue> {
    run.iter()
        .map(|(qid, list)| (qid.clone(), metric.per_query(list, qrels)))
        .collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationKind {
    Spearman,
    Kendall,
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two observations",
        ));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs.iter().copied());
    let my = mean(ys.iter().copied());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

fn spearman_unchecked(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Kendall tau-b.
fn kendall_unchecked(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].total_cmp(&xs[j]) as i64;
            let dy = ys[i].total_cmp(&ys[j]) as i64;
            let dx = if xs[i] == xs[j] { 0 } else { dx };
            let dy = if ys[i] == ys[j] { 0 } else { dy };
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tie_x) * (conc + disc + tie_y)) as f64).sqrt();
    (conc - disc) as f64 / denom
}

fn corr_unchecked(xs: &[f64], ys: &[f64], kind: CorrelationKind) -> f64 {
    match kind {
        CorrelationKind::Spearman => spearman_unchecked(xs, ys),
        CorrelationKind::Kendall => kendall_unchecked(xs, ys),
    }
}

/// Spearman's rho (average-rank ties) or Kendall's tau-b.
pub fn rank_correlation(xs: &[f64], ys: &[f64], kind: CorrelationKind) -> Result<f64> {
    check_pair(xs, ys)?;
    Ok(corr_unchecked(xs, ys, kind).clamp(-1.0, 1.0))
}

/// Tolerance for "at least as extreme" comparisons between correlations that
/// are mathematically equal but computed along different float paths.
const EXTREME_EPS: f64 = 1e-12;

/// Two-sided permutation p-value. Enumerates all `n!` orderings of `ys`
/// when `n <= 8`, otherwise draws `num_permutations` shuffles.
pub fn permutation_significance(
    xs: &[f64],
    ys: &[f64],
    kind: CorrelationKind,
    num_permutations: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(xs, ys)?;
    if xs.len() <= EXACT_PERMUTATION_LIMIT {
        exact_permutation_p(xs, ys, kind)
    } else {
        sampled_permutation_p(xs, ys, kind, num_permutations, seed)
    }
}

/// Monte-Carlo p-value `(1 + #{|r_perm| >= |r_obs|}) / (1 + num_permutations)`.
pub fn sampled_permutation_p(
    xs: &[f64],
    ys: &[f64],
    kind: CorrelationKind,
    num_permutations: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(xs, ys)?;
    if num_permutations == 0 {
        return Err(Error::InvalidArgument(
            "num_permutations must be >= 1".into(),
        ));
    }
    let observed = corr_unchecked(xs, ys, kind).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = ys.to_vec();
    let mut extreme = 0usize;
    for _ in 0..num_permutations {
        perm.shuffle(&mut rng);
        if corr_unchecked(xs, &perm, kind).abs() >= observed - EXTREME_EPS {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (1 + num_permutations) as f64)
}

/// Exact p-value: fraction of all orderings of `ys` (identity included) at
/// least as extreme as the observed one.
pub fn exact_permutation_p(xs: &[f64], ys: &[f64], kind: CorrelationKind) -> Result<f64> {
    check_pair(xs, ys)?;
    if xs.len() > 10 {
        return Err(Error::InvalidArgument(
            "exact enumeration limited to n <= 10".into(),
        ));
    }
    let observed = corr_unchecked(xs, ys, kind).abs();
    let mut perm = ys.to_vec();
    let n = perm.len();
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let mut total = 1usize;
    // The identity ordering is always as extreme as itself.
    let mut extreme = 1usize;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += 1;
            if corr_unchecked(xs, &perm, kind).abs() >= observed - EXTREME_EPS {
                extreme += 1;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(extreme as f64 / total as f64)
}

/// Two-sided standard normal tail `P(|Z| >= |z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Compare two correlations via Fisher's z transform, treating them as
/// independent samples.
pub fn fisher_z_compare(r1: f64, n1: usize, r2: f64, n2: usize) -> Result<f64> {
    for r in [r1, r2] {
        if !(r.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Fisher z needs |r| < 1, got {r}"
            )));
        }
    }
    if n1 < 4 || n2 < 4 {
        return Err(Error::InvalidArgument("Fisher z needs n >= 4".into()));
    }
    let se = (1.0 / (n1 as f64 - 3.0) + 1.0 / (n2 as f64 - 3.0)).sqrt();
    Ok(normal_two_sided_p((r1.atanh() - r2.atanh()) / se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TTestFlag {
    /// Every difference is zero; p is 1 by convention.
    ZeroDifferences,
    /// Differences are constant and non-zero; t is infinite and p is 0.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub dof: usize,
    pub flag: Option<TTestFlag>,
}

/// Two-sided paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs n >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let dof = n - 1;
    let m = mean(d.iter().copied());
    if d.iter().all(|x| *x == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p_value: 1.0,
            dof,
            flag: Some(TTestFlag::ZeroDifferences),
        });
    }
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / dof as f64;
    if var == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(m),
            p_value: 0.0,
            dof,
            flag: Some(TTestFlag::ZeroVariance),
        });
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("dof >= 1");
    Ok(TTest {
        t,
        p_value: (2.0 * dist.cdf(-t.abs())).min(1.0),
        dof,
        flag: None,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaHistogram {
    pub improved: usize,
    pub degraded: usize,
    pub unchanged: usize,
}

/// Classify per-query deltas `treatment - baseline`; `|delta| <= epsilon`
/// counts as unchanged.
pub fn delta_histogram(
    baseline: &BTreeMap<String, f64>,
    treatment: &BTreeMap<String, f64>,
    epsilon: f64,
) -> Result<DeltaHistogram> {
    if baseline.len() != treatment.len() || baseline.keys().any(|q| !treatment.contains_key(q)) {
        let only: Vec<&str> = baseline
            .keys()
            .filter(|q| !treatment.contains_key(*q))
            .chain(treatment.keys().filter(|q| !baseline.contains_key(*q)))
            .map(String::as_str)
            .take(5)
            .collect();
        return Err(Error::QidMismatch(only.join(", ")));
    }
    let mut h = DeltaHistogram::default();
    for (qid, b) in baseline {
        let delta = treatment[qid] - b;
        if delta.abs() <= epsilon {
            h.unchanged += 1;
        } else if delta > 0.0 {
            h.improved += 1;
        } else {
            h.degraded += 1;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub predictor: PredictorKind,
    pub metric: String,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub p_value_spearman: f64,
    pub p_value_kendall: f64,
    pub n: usize,
}

impl CorrelationReport {
    pub fn compute(
        predictor: PredictorKind,
        metric: &str,
        predicted: &[f64],
        effectiveness: &[f64],
        num_permutations: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(CorrelationReport {
            predictor,
            metric: metric.to_owned(),
            spearman_rho: rank_correlation(predicted, effectiveness, CorrelationKind::Spearman)?,
            kendall_tau: rank_correlation(predicted, effectiveness, CorrelationKind::Kendall)?,
            p_value_spearman: permutation_significance(
                predicted,
                effectiveness,
                CorrelationKind::Spearman,
                num_permutations,
                seed,
            )?,
            p_value_kendall: permutation_significance(
                predicted,
                effectiveness,
                CorrelationKind::Kendall,
                num_permutations,
                seed,
            )?,
            n: predicted.len(),
        })
    }
}
