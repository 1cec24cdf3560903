use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{accumulate_nll_grad, Dropout};
use super::params::ModelParameters;
use super::vocab::{EncodedSource, Vocabulary};
use crate::error::{Error, Result};
use crate::mining::QueryPair;
use crate::text::tokenize;

/// A source/target pair already mapped into a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: EncodedSource,
    /// Extended ids ending in EOS.
    pub target: Vec<u32>,
    /// Unstemmed target tokens, used by the rewards.
    pub truth: Vec<String>,
}

impl Example {
    pub fn new(vocab: &Vocabulary, source_text: &str, target_text: &str) -> Result<Self> {
        let src = tokenize(source_text);
        if src.is_empty() {
            return Err(Error::EmptyInput("source text has no tokens"));
        }
        let truth = tokenize(target_text);
        if truth.is_empty() {
            return Err(Error::EmptyInput("target text has no tokens"));
        }
        let source = vocab.encode_source(&src);
        let target = vocab.encode_target(&truth, &source);
        Ok(Example {
            source,
            target,
            truth,
        })
    }
}

/// Examples for every pair, skipping pairs with a token-less side.
pub fn prepare_examples(vocab: &Vocabulary, pairs: &[QueryPair]) -> Vec<Example> {
    pairs
        .iter()
        .filter_map(|p| Example::new(vocab, &p.source_text, &p.target_text).ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Rescale `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            learning_rate: 1e-3,
            batch_size: 12,
            dropout: 0.1,
            clip_norm: 1.0,
            max_epochs: 50,
            patience: 3,
            seed: 0,
        }
    }
}

impl MlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParameters,
    pub history: Vec<MlEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Per-token NLL over a set of examples, without dropout.
pub fn mean_token_loss(params: &ModelParameters, examples: &[Example]) -> Result<f64> {
    let mut nll = 0.0;
    let mut tokens = 0;
    let mut scratch = Vec::new();
    for ex in examples {
        let l = accumulate_nll_grad(params, &ex.source, &ex.target, 0.0, None, &mut scratch)?;
        nll += l.nll;
        tokens += l.tokens;
    }
    if tokens == 0 {
        return Err(Error::EmptyInput("examples for loss"));
    }
    Ok(nll / tokens as f64)
}

/// Teacher-forced maximum-likelihood training with Adam, global-norm
/// clipping and early stopping on validation loss.
pub fn train_ml(
    params: ModelParameters,
    train: &[Example],
    valid: &[Example],
    cfg: &MlConfig,
) -> Result<MlOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyInput("training and validation examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0;
        for batch in order.chunks(cfg.batch_size) {
            let tokens: usize = batch
                .iter()
                .map(|&i| {
                    train[i]
                        .target
                        .iter()
                        .filter(|&&y| y != super::vocab::PAD)
                        .count()
                })
                .sum();
            if tokens == 0 {
                continue;
            }
            let w = 1.0 / tokens as f64;
            let mut grad = vec![0.0; params.len()];
            for &i in batch {
                let ex = &train[i];
                let d = Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                };
                let l =
                    accumulate_nll_grad(&params, &ex.source, &ex.target, w, Some(d), &mut grad)?;
                epoch_nll += l.nll;
                epoch_tokens += l.tokens;
            }
            let norm = clip_global_norm(&mut grad, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    stage: "train_ml",
                    detail: format!("gradient norm {norm} in epoch {epoch}"),
                });
            }
            adam.step(params.as_mut_slice(), &grad);
        }
        let train_loss = epoch_nll / epoch_tokens.max(1) as f64;
        let valid_loss = mean_token_loss(&params, valid)?;
        if !(train_loss.is_finite() && valid_loss.is_finite()) {
            return Err(Error::NonFinite {
                stage: "train_ml",
                detail: format!("epoch {epoch}: train {train_loss}, valid {valid_loss}"),
            });
        }
        history.push(MlEpoch {
            epoch,
            train_loss,
            valid_loss,
        });
        if valid_loss < best.0 {
            best = (valid_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (_, best_epoch, best_params) = best;
    Ok(MlOutcome {
        params: if best_epoch == 0 { params } else { best_params },
        history,
        best_epoch,
        stopped_early,
    })
}

pub fn write_ml_history<W: Write>(mut w: W, history: &[MlEpoch]) -> io::Result<()> {
    writeln!(w, "epoch\ttrain_loss\tvalid_loss")?;
    for e in history {
        writeln!(w, "{}\t{}\t{}", e.epoch, e.train_loss, e.valid_loss)?;
    }
    Ok(())
}
