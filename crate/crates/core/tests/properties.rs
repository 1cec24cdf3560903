mod common;

use std::collections::{BTreeMap, HashMap};

use common::{oracle_predict, rel_err, term};
use drqr::eval::{average_precision, ndcg_at_k, rank_correlation, CorrelationKind};
use drqr::index::{CollectionStats, Document, InvertedIndex};
use drqr::mining::{mine_pairs, Qrels};
use drqr::qpp::{predict, PredictorKind};
use drqr::ranking::{mix_queries, retrieve, RankedList, RankingModel, WeightedQuery};
use drqr::rl::{dedup_penalize, f1_reward};
use proptest::prelude::*;

fn corpus() -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec(prop::collection::vec(0u8..25, 1..20), 1..25).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, toks)| Document {
                docno: format!("d{i:02}"),
                terms: toks.iter().map(|t| term(&format!("t{t}"))).collect(),
            })
            .collect()
    })
}

fn query() -> impl Strategy<Value = Vec<String>> {
    // t25..t29 never occur in the corpus.
    prop::collection::vec((0u8..30).prop_map(|t| format!("t{t}")), 1..7)
}

fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0u8..8).prop_map(|t| format!("w{t}")), 0..max)
}

proptest! {
    #[test]
    fn collection_counts_add_up(docs in corpus()) {
        let stats = CollectionStats::from_documents(&docs);
        let total: usize = docs.iter().map(|d| d.terms.len()).sum();
        prop_assert_eq!(stats.total_terms() as usize, total);
        prop_assert_eq!(stats.iter().map(|(_, s)| s.coll_freq).sum::<u64>() as usize, total);
        for (t, s) in stats.iter() {
            let df = docs.iter().filter(|d| d.terms.iter().any(|x| x.as_str() == t)).count();
            let cf = docs.iter().flat_map(|d| &d.terms).filter(|x| x.as_str() == t).count();
            prop_assert_eq!(s.doc_freq as usize, df);
            prop_assert_eq!(s.coll_freq as usize, cf);
            prop_assert!(s.doc_freq <= s.coll_freq);
        }
        let index = InvertedIndex::from_documents(docs.clone()).unwrap();
        for (t, postings) in index.terms() {
            let tf: u64 = postings.iter().map(|p| p.tf as u64).sum();
            prop_assert_eq!(index.term_statistics(t), (postings.len() as u64, tf));
        }
        let back = InvertedIndex::from_bytes(&index.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), index.to_bytes());
    }

    #[test]
    fn predictors_match_oracle(docs in corpus(), q in query()) {
        let stats = CollectionStats::from_documents(&docs);
        for kind in PredictorKind::ALL {
            let got = predict(&stats, &q, kind).unwrap().value;
            let want = oracle_predict(&docs, &q, kind);
            prop_assert!(rel_err(got, want) <= 1e-9, "{kind}: {got} vs {want}");
        }
    }

    #[test]
    fn predictors_ignore_term_order(docs in corpus(), q in query(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let stats = CollectionStats::from_documents(&docs);
        let mut shuffled = q.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        for kind in PredictorKind::ALL {
            let a = predict(&stats, &q, kind).unwrap().value;
            let b = predict(&stats, &shuffled, kind).unwrap().value;
            prop_assert_eq!(a.to_bits(), b.to_bits(), "{}", kind);
        }
    }

    #[test]
    fn scq_aggregates_are_ordered(docs in corpus(), q in query()) {
        let stats = CollectionStats::from_documents(&docs);
        let avg = predict(&stats, &q, PredictorKind::AvgScq).unwrap();
        let max = predict(&stats, &q, PredictorKind::MaxScq).unwrap().value;
        let sum = predict(&stats, &q, PredictorKind::SumScq).unwrap().value;
        // Per-term SCQ is non-negative: F >= 1 and idf >= 0 for seen terms.
        if avg.num_scored_terms > 0 {
            prop_assert!(max >= avg.value - 1e-12);
            prop_assert!(sum >= max - 1e-12);
        }
    }

    #[test]
    fn scs_is_ictf_minus_log_length(docs in corpus(), picks in prop::collection::btree_set(0u8..25, 1..6)) {
        let stats = CollectionStats::from_documents(&docs);
        let q: Vec<String> = picks.iter().map(|t| format!("t{t}")).filter(|t| stats.term(t).coll_freq > 0).collect();
        prop_assume!(!q.is_empty());
        let scs = predict(&stats, &q, PredictorKind::Scs).unwrap().value;
        let ictf = predict(&stats, &q, PredictorKind::AvgIctf).unwrap().value;
        prop_assert!((scs - (ictf - (q.len() as f64).ln())).abs() <= 1e-9);
    }

    #[test]
    fn unseen_terms_do_not_change_rankings(docs in corpus(), q in query(), extra in prop::collection::vec(30u8..40, 1..4)) {
        let index = InvertedIndex::from_documents(docs).unwrap();
        let base = WeightedQuery::from_terms("q", q.iter().map(|t| term(t)));
        let padded = WeightedQuery::from_terms(
            "q",
            q.iter().map(|t| term(t)).chain(extra.iter().map(|t| term(&format!("t{t}")))),
        );
        for model in [RankingModel::Dph, RankingModel::BM25_DEFAULT] {
            prop_assert_eq!(retrieve(model, &index, &base, 100, "x"), retrieve(model, &index, &padded, 100, "x"));
        }
    }

    #[test]
    fn zero_theta_keeps_original_weights(q0 in query(), qr in query()) {
        let a = WeightedQuery::from_terms("q", q0.iter().map(|t| term(t)));
        let b = WeightedQuery::from_terms("q", qr.iter().map(|t| term(t)));
        prop_assert_eq!(mix_queries(&a, &b, 0.0).unwrap(), a);
    }

    #[test]
    fn dedup_is_idempotent(s in words(12)) {
        let once = dedup_penalize(&s);
        prop_assert_eq!(dedup_penalize(&once), once.clone());
        prop_assert_eq!(once.len(), s.len());
    }

    #[test]
    fn f1_is_symmetric_and_bounded(a in words(8), b in words(8)) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let ab = f1_reward(&a, &b).unwrap();
        let ba = f1_reward(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn correlations_survive_monotone_maps(
        pairs in prop::collection::vec((0i32..10, 0i32..10), 3..20),
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assume!(xs.iter().any(|&x| x != xs[0]) && ys.iter().any(|&y| y != ys[0]));
        let fx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let gy: Vec<f64> = ys.iter().map(|y| (y / 3.0).exp()).collect();
        for kind in [CorrelationKind::Spearman, CorrelationKind::Kendall] {
            let r = rank_correlation(&xs, &ys, kind).unwrap();
            let s = rank_correlation(&fx, &gy, kind).unwrap();
            prop_assert!((r - s).abs() <= 1e-12, "{kind:?}: {r} vs {s}");
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn metrics_are_bounded(
        grades in prop::collection::btree_map(0u8..20, 0i32..4, 0..10),
        order in Just((0u8..20).collect::<Vec<u8>>()).prop_shuffle(),
    ) {
        let qrels = Qrels::from_rows(grades.iter().map(|(d, g)| ("q".to_string(), format!("d{d}"), *g)));
        let ranked = RankedList {
            qid: "q".into(),
            entries: order.iter().enumerate().map(|(i, d)| (format!("d{d}"), -(i as f64))).collect(),
            tag: "t".into(),
        };
        let ap = average_precision(&ranked, &qrels, 1000).value;
        let ndcg = ndcg_at_k(&ranked, &qrels, 10).value;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
    }

    #[test]
    fn mining_ignores_row_order(
        rows in prop::collection::btree_map((0u8..8, 0u8..5), 0i32..3, 0..25),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let rows: Vec<(String, String, i32)> =
            rows.into_iter().map(|((q, d), g)| (format!("q{q}"), format!("d{d}"), g)).collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let texts: HashMap<String, String> = (0..7).map(|i| (format!("q{i}"), format!("text {i}"))).collect();
        let a = mine_pairs(&Qrels::from_rows(rows), &texts);
        let b = mine_pairs(&Qrels::from_rows(shuffled), &texts);
        prop_assert_eq!(&a, &b);
        let by_source: BTreeMap<&str, usize> = a.pairs.iter().fold(BTreeMap::new(), |mut m, p| {
            *m.entry(p.source_qid.as_str()).or_default() += 1;
            m
        });
        prop_assert_eq!(by_source.values().sum::<usize>(), a.pairs.len());
        prop_assert_eq!(a.unordered_count() * 2, a.pairs.len());
    }
}
