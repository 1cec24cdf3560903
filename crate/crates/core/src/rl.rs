//! Rewards and self-critic REINFORCE on top of the seq2seq model.
//!
//! The reward of a sampled reformulation is `lambda * F1 + (1 - lambda) * QPP`,
//! observed once per complete sequence. The greedy decode of the same source
//! is the baseline.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::CollectionStats;
use crate::qpp::{predict, Calibration, PredictorKind};
use crate::seq2seq::{
    accumulate_policy_grad, clip_global_norm, greedy_decode, sample_decode, Adam, AdamConfig,
    Example, ModelParameters, Vocabulary, DEFAULT_MAX_LEN, PAD_TOKEN,
};
use crate::text::{porter, tokenize};

/// Later repeats of a token become PAD; length is preserved.
pub fn dedup_penalize<S: AsRef<str>>(sequence: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    sequence
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if t != PAD_TOKEN && seen.insert(t) {
                t.to_owned()
            } else {
                PAD_TOKEN.to_owned()
            }
        })
        .collect()
}

/// Set F1 between the de-duplicated prediction and the distinct truth tokens.
pub fn f1_reward<P: AsRef<str>, T: AsRef<str>>(predicted: &[P], truth: &[T]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("ground-truth reformulation"));
    }
    let truth: HashSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    let pred = dedup_penalize(predicted);
    let kept: Vec<&str> = pred
        .iter()
        .map(String::as_str)
        .filter(|t| *t != PAD_TOKEN)
        .collect();
    let matched = kept.iter().filter(|t| truth.contains(*t)).count();
    if matched == 0 {
        return Ok(0.0);
    }
    let p = matched as f64 / kept.len() as f64;
    let r = matched as f64 / truth.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda: f64,
    pub predictor: PredictorKind,
    pub calibration: Calibration,
}

impl RewardConfig {
    pub const DEFAULT_LAMBDA: f64 = 0.5;

    pub fn new(lambda: f64, calibration: Calibration) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be in [0, 1], got {lambda}"
            )));
        }
        Ok(RewardConfig {
            lambda,
            predictor: calibration.kind,
            calibration,
        })
    }

    /// The pure-F1 reward of the CatseqRL baseline.
    pub fn catseq_rl(calibration: Calibration) -> Self {
        RewardConfig {
            lambda: 1.0,
            predictor: calibration.kind,
            calibration,
        }
    }

    /// Calibrate `kind` on the given query texts, processed the same way
    /// predictions are.
    pub fn calibrate<I, S>(
        stats: &CollectionStats,
        queries: I,
        kind: PredictorKind,
        lambda: f64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let processed: Vec<Vec<String>> = queries
            .into_iter()
            .map(|q| stem_for_qpp(&tokenize(q.as_ref())))
            .filter(|q| !q.is_empty())
            .collect();
        Self::new(lambda, Calibration::fit(stats, &processed, kind)?)
    }
}

fn stem_for_qpp<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| *t != PAD_TOKEN)
        .map(porter::stem)
        .collect()
}

/// Calibrated predictor value of the stemmed prediction, 0 when nothing is left.
pub fn qpp_reward<S: AsRef<str>>(
    predicted: &[S],
    stats: &CollectionStats,
    config: &RewardConfig,
) -> Result<f64> {
    let query = stem_for_qpp(predicted);
    if query.is_empty() {
        return Ok(0.0);
    }
    let score = predict(stats, &query, config.predictor)?;
    if score.num_scored_terms == 0 {
        return Ok(0.0);
    }
    Ok(config.calibration.normalize(score.value))
}

pub fn combined_reward<P: AsRef<str>, T: AsRef<str>>(
    predicted: &[P],
    truth: &[T],
    stats: &CollectionStats,
    config: &RewardConfig,
) -> Result<f64> {
    let f1 = f1_reward(predicted, truth)?;
    let qpp = qpp_reward(predicted, stats, config)?;
    Ok(config.lambda * f1 + (1.0 - config.lambda) * qpp)
}

/// Reward of a complete decoded sequence.
pub trait RewardFn {
    fn reward(&self, predicted: &[String], truth: &[String]) -> Result<f64>;
}

pub struct Reward<'a> {
    pub stats: &'a CollectionStats,
    pub config: RewardConfig,
}

impl RewardFn for Reward<'_> {
    fn reward(&self, predicted: &[String], truth: &[String]) -> Result<f64> {
        combined_reward(predicted, truth, self.stats, &self.config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    /// Sampled extended ids, EOS included when it was drawn.
    pub sample_ids: Vec<u32>,
    pub sample: Vec<String>,
    pub baseline: Vec<String>,
    pub r_sample: f64,
    pub r_baseline: f64,
    pub advantage: f64,
    pub log_probs: Vec<f64>,
}

/// Gradient of `-(1/B) * sum_b (r(sample_b) - r(greedy_b)) * sum_t log p(sample_b,t)`.
/// Examples whose advantage is zero are skipped entirely.
pub fn self_critic_update<R: RewardFn + ?Sized, G: Rng + ?Sized>(
    params: &ModelParameters,
    batch: &[&Example],
    vocab: &Vocabulary,
    reward: &R,
    max_len: usize,
    rng: &mut G,
) -> Result<(Vec<f64>, Vec<RewardRecord>)> {
    let mut grad = vec![0.0; params.len()];
    let mut records = Vec::with_capacity(batch.len());
    let scale = 1.0 / batch.len().max(1) as f64;
    for ex in batch {
        let sampled = sample_decode(params, &ex.source, max_len, rng)?;
        let greedy = greedy_decode(params, &ex.source, max_len)?;
        let sample = vocab.decode(&sampled.ids, &ex.source);
        let baseline = vocab.decode(&greedy, &ex.source);
        let r_sample = reward.reward(&sample, &ex.truth)?;
        let r_baseline = reward.reward(&baseline, &ex.truth)?;
        let advantage = r_sample - r_baseline;
        if !advantage.is_finite() {
            return Err(Error::NonFinite {
                stage: "self-critic reward",
                detail: format!("r_sample {r_sample}, r_baseline {r_baseline}"),
            });
        }
        if advantage != 0.0 {
            accumulate_policy_grad(
                params,
                &ex.source,
                &sampled.ids,
                advantage * scale,
                &mut grad,
            )?;
        }
        records.push(RewardRecord {
            sample_ids: sampled.ids,
            sample,
            baseline,
            r_sample,
            r_baseline,
            advantage,
            log_probs: sampled.log_probs,
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            stage: "self-critic gradient",
            detail: format!("parameter {i}"),
        });
    }
    Ok((grad, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub patience: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            epochs: 10,
            learning_rate: 5e-5,
            batch_size: 32,
            clip_norm: 1.0,
            patience: 3,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlEpoch {
    pub epoch: usize,
    pub mean_sample: f64,
    pub mean_baseline: f64,
    pub mean_advantage: f64,
    /// Mean greedy reward on the validation examples after the epoch.
    pub valid_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlOutcome {
    pub params: ModelParameters,
    /// Validation reward of the starting parameters.
    pub initial_valid_reward: f64,
    pub history: Vec<RlEpoch>,
    /// 0 when no epoch beat the starting parameters.
    pub best_epoch: usize,
}

impl RlOutcome {
    pub fn best_valid_reward(&self) -> f64 {
        self.history
            .iter()
            .map(|e| e.valid_reward)
            .fold(self.initial_valid_reward, f64::max)
    }
}

/// Mean reward of greedy reformulations.
pub fn mean_greedy_reward<R: RewardFn + ?Sized>(
    params: &ModelParameters,
    examples: &[Example],
    vocab: &Vocabulary,
    reward: &R,
    max_len: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("validation examples"));
    }
    let mut total = 0.0;
    for ex in examples {
        let ids = greedy_decode(params, &ex.source, max_len)?;
        total += reward.reward(&vocab.decode(&ids, &ex.source), &ex.truth)?;
    }
    Ok(total / examples.len() as f64)
}

/// Self-critic training from ML-pretrained parameters, keeping the parameters
/// with the best validation reward.
pub fn train_drqr<R: RewardFn + ?Sized>(
    params: ModelParameters,
    train: &[Example],
    valid: &[Example],
    vocab: &Vocabulary,
    reward: &R,
    cfg: &RlConfig,
) -> Result<RlOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let initial = mean_greedy_reward(&params, valid, vocab, reward, cfg.max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), params.len());
    let mut params = params;
    let mut best = (initial, 0, params.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut rs, mut rb, mut adv, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (mut grad, records) =
                self_critic_update(&params, &batch, vocab, reward, cfg.max_len, &mut rng)?;
            for r in &records {
                rs += r.r_sample;
                rb += r.r_baseline;
                adv += r.advantage;
            }
            n += records.len();
            if grad.iter().any(|&g| g != 0.0) {
                clip_global_norm(&mut grad, cfg.clip_norm);
                adam.step(params.as_mut_slice(), &grad);
            }
        }
        let valid_reward = mean_greedy_reward(&params, valid, vocab, reward, cfg.max_len)?;
        let n = n as f64;
        history.push(RlEpoch {
            epoch,
            mean_sample: rs / n,
            mean_baseline: rb / n,
            mean_advantage: adv / n,
            valid_reward,
        });
        if valid_reward > best.0 {
            best = (valid_reward, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(RlOutcome {
        params: best.2,
        initial_valid_reward: initial,
        history,
        best_epoch: best.1,
    })
}

pub fn write_rl_history<W: Write>(mut w: W, history: &[RlEpoch]) -> io::Result<()> {
    writeln!(
        w,
        "epoch\tmean_sample_reward\tmean_baseline_reward\tmean_advantage"
    )?;
    for e in history {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.epoch, e.mean_sample, e.mean_baseline, e.mean_advantage
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;
    use std::f64::consts::LN_2;

    use super::*;
    use crate::index::TermStats;
    use crate::mining::QueryPair;
    use crate::seq2seq::{prepare_examples, ModelDims, EOS};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn c4() -> CollectionStats {
        let t = |df, cf| TermStats {
            doc_freq: df,
            coll_freq: cf,
        };
        CollectionStats::from_counts(
            4,
            9,
            [
                ("cat".into(), t(2, 2)),
                ("sat".into(), t(1, 1)),
                ("mat".into(), t(1, 1)),
                ("hat".into(), t(1, 1)),
                ("dog".into(), t(2, 3)),
                ("run".into(), t(1, 1)),
            ],
        )
    }

    #[test]
    fn dedup_examples() {
        assert_eq!(
            dedup_penalize(&["a", "b", "a", "c", "b"]),
            s(&["a", "b", PAD_TOKEN, "c", PAD_TOKEN])
        );
        assert_eq!(dedup_penalize(&["a", "b", "c"]), s(&["a", "b", "c"]));
        assert_eq!(
            dedup_penalize(&["a", "a", "a"]),
            s(&["a", PAD_TOKEN, PAD_TOKEN])
        );
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_reward(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(f1_reward(&["a", "b"], &["c"]).unwrap(), 0.0);
        let f = f1_reward(&["a", "b", "c"], &["a", "b", "d"]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        // Repeats are PAD and count against precision.
        assert!((f1_reward(&["a", "a"], &["a"]).unwrap() - 1.0).abs() < 1e-12);
        assert!(f1_reward(&["a"], &[] as &[&str]).is_err());
        assert_eq!(f1_reward(&[] as &[&str], &["a"]).unwrap(), 0.0);
    }

    #[test]
    fn qpp_reward_examples() {
        let stats = c4();
        let cal = Calibration::new(PredictorKind::AvgIdf, 0.0, 4f64.ln()).unwrap();
        let cfg = RewardConfig::new(0.0, cal).unwrap();
        assert_eq!(qpp_reward(&["mat"], &stats, &cfg).unwrap(), 1.0);
        assert_eq!(
            qpp_reward(&[PAD_TOKEN, PAD_TOKEN], &stats, &cfg).unwrap(),
            0.0
        );
        assert_eq!(qpp_reward(&["unseen"], &stats, &cfg).unwrap(), 0.0);
        // "cats" stems to "cat": idf ln 2, half of the range.
        assert!((qpp_reward(&["cats"], &stats, &cfg).unwrap() - LN_2 / 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn combined_boundaries() {
        let stats = c4();
        let cal = Calibration::new(PredictorKind::AvgIdf, 0.0, 4f64.ln()).unwrap();
        let pred = s(&["mat", "cat", "x"]);
        let truth = s(&["cat", "dog"]);
        let f1 = f1_reward(&pred, &truth).unwrap();
        let q = qpp_reward(&pred, &stats, &RewardConfig::new(0.0, cal).unwrap()).unwrap();
        assert_eq!(
            combined_reward(&pred, &truth, &stats, &RewardConfig::new(1.0, cal).unwrap()).unwrap(),
            f1
        );
        assert_eq!(
            combined_reward(&pred, &truth, &stats, &RewardConfig::new(0.0, cal).unwrap()).unwrap(),
            q
        );
        let half =
            combined_reward(&pred, &truth, &stats, &RewardConfig::new(0.5, cal).unwrap()).unwrap();
        assert!((half - 0.5 * (f1 + q)).abs() < 1e-15);
        assert!(RewardConfig::new(1.5, cal).is_err());
    }

    fn toy() -> (Vocabulary, Vec<Example>) {
        let pairs: Vec<QueryPair> = ["a b", "c d", "b c e", "d a"]
            .iter()
            .map(|t| QueryPair {
                source_qid: "1".into(),
                target_qid: "2".into(),
                source_text: t.to_string(),
                target_text: t.to_string(),
            })
            .collect();
        let vocab = Vocabulary::build(&pairs, 1).unwrap();
        let ex = prepare_examples(&vocab, &pairs);
        (vocab, ex)
    }

    struct F1;
    impl RewardFn for F1 {
        fn reward(&self, p: &[String], t: &[String]) -> Result<f64> {
            f1_reward(p, t)
        }
    }

    /// Records every sequence it is asked to score.
    struct Spy(RefCell<Vec<Vec<String>>>);
    impl RewardFn for Spy {
        fn reward(&self, p: &[String], t: &[String]) -> Result<f64> {
            self.0.borrow_mut().push(p.to_vec());
            f1_reward(p, t)
        }
    }

    #[test]
    fn rewards_only_for_complete_sequences() {
        let (vocab, ex) = toy();
        let params = ModelParameters::init_uniform(
            ModelDims::new(vocab.len(), 4),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let spy = Spy(RefCell::new(Vec::new()));
        let batch: Vec<&Example> = ex.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, records) = self_critic_update(&params, &batch, &vocab, &spy, 6, &mut rng).unwrap();
        let calls = spy.0.into_inner();
        assert_eq!(calls.len(), 2 * batch.len());
        for (i, r) in records.iter().enumerate() {
            assert_eq!(calls[2 * i], r.sample);
            assert_eq!(calls[2 * i + 1], r.baseline);
            // The scored sequence is the whole decode, not a prefix.
            let n = r.log_probs.len();
            assert!(n == 6 || r.sample.len() < n);
            assert_eq!(r.advantage, r.r_sample - r.r_baseline);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sampled = sample_decode(&params, &ex[0].source, 6, &mut rng).unwrap();
        assert!(sampled.ids.len() == 6 || *sampled.ids.last().unwrap() == EOS);
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let (vocab, ex) = toy();
        let params = ModelParameters::init_uniform(
            ModelDims::new(vocab.len(), 4),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        struct Constant;
        impl RewardFn for Constant {
            fn reward(&self, _: &[String], _: &[String]) -> Result<f64> {
                Ok(0.7)
            }
        }
        let batch: Vec<&Example> = ex.iter().collect();
        let (grad, records) = self_critic_update(
            &params,
            &batch,
            &vocab,
            &Constant,
            6,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(records.iter().all(|r| r.advantage == 0.0));
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn positive_advantage_step_raises_sample_log_prob() {
        let (vocab, ex) = toy();
        let params = ModelParameters::init_uniform(
            ModelDims::new(vocab.len(), 4),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let batch = [&ex[2]];
        for seed in 0..50 {
            let (grad, records) = self_critic_update(
                &params,
                &batch,
                &vocab,
                &F1,
                6,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            if records[0].advantage <= 0.0 {
                continue;
            }
            let sampled = sample_decode(
                &params,
                &ex[2].source,
                6,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            let before: f64 = sampled.log_probs.iter().sum();
            let mut stepped = params.clone();
            for (p, g) in stepped.as_mut_slice().iter_mut().zip(&grad) {
                *p -= 1e-3 * g;
            }
            let after: f64 =
                crate::seq2seq::target_log_probs(&stepped, &ex[2].source, &sampled.ids)
                    .unwrap()
                    .iter()
                    .sum();
            assert!(after > before, "{after} <= {before}");
            return;
        }
        panic!("no positive-advantage sample found");
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let (vocab, ex) = toy();
        let params = ModelParameters::init_uniform(
            ModelDims::new(vocab.len(), 4),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let cfg = RlConfig {
            epochs: 0,
            ..RlConfig::default()
        };
        let out = train_drqr(params.clone(), &ex, &ex, &vocab, &F1, &cfg).unwrap();
        assert_eq!(out.params, params);
        assert!(out.history.is_empty());
    }

    #[test]
    fn catseq_and_lambda_one_histories_match() {
        let (vocab, ex) = toy();
        let stats = c4();
        let cal = Calibration::new(PredictorKind::AvgIdf, 0.0, 1.0).unwrap();
        let params = ModelParameters::init_uniform(
            ModelDims::new(vocab.len(), 4),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let cfg = RlConfig {
            epochs: 3,
            learning_rate: 1e-2,
            batch_size: 2,
            seed: 4,
            ..RlConfig::default()
        };
        let drqr = Reward {
            stats: &stats,
            config: RewardConfig::new(1.0, cal).unwrap(),
        };
        let catseq = Reward {
            stats: &stats,
            config: RewardConfig::catseq_rl(cal),
        };
        let a = train_drqr(params.clone(), &ex, &ex, &vocab, &drqr, &cfg).unwrap();
        let b = train_drqr(params, &ex, &ex, &vocab, &catseq, &cfg).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn history_tsv_columns() {
        let mut buf = Vec::new();
        let e = RlEpoch {
            epoch: 1,
            mean_sample: 0.5,
            mean_baseline: 0.25,
            mean_advantage: 0.25,
            valid_reward: 0.9,
        };
        write_rl_history(&mut buf, &[e]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch\tmean_sample_reward\tmean_baseline_reward\tmean_advantage\n1\t0.5\t0.25\t0.25\n"
        );
    }
}
