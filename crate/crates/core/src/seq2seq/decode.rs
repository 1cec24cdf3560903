use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::model::{decode_step, encode, initial_state, CopyMixture};
use super::params::ModelParameters;
use super::vocab::{EncodedSource, BOS, EOS, UNK};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 20;

/// A decoded sequence over the extended vocabulary. `ids` ends with EOS when
/// the model emitted it before `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub ids: Vec<u32>,
    /// `log p` of each emitted id under the mixture it was drawn from.
    pub log_probs: Vec<f64>,
}

impl Decoded {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lowest index among the maxima.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn run<F>(
    params: &ModelParameters,
    source: &EncodedSource,
    max_len: usize,
    mut choose: F,
) -> Result<Decoded>
where
    F: FnMut(&CopyMixture) -> Result<u32>,
{
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let enc = encode(params, &source.ids)?;
    let mut state = initial_state(params, &enc);
    let mut prev = BOS;
    let mut out = Decoded {
        ids: Vec::new(),
        log_probs: Vec::new(),
    };
    while out.ids.len() < max_len {
        let (mixture, next) = decode_step(params, prev, &state, &enc, source);
        let y = choose(&mixture)?;
        out.ids.push(y);
        out.log_probs.push(mixture.mixture[y as usize].ln());
        if y == EOS {
            break;
        }
        state = next;
        prev = y;
    }
    Ok(out)
}

/// Argmax decoding. An UNK argmax is replaced by the source token with the
/// highest attention weight, so copyable surface forms are never lost.
pub fn greedy_decode(
    params: &ModelParameters,
    source: &EncodedSource,
    max_len: usize,
) -> Result<Vec<u32>> {
    let out = run(params, source, max_len, |m| {
        let y = argmax(&m.mixture) as u32;
        Ok(if y == UNK {
            source.ext[argmax(&m.copy)]
        } else {
            y
        })
    })?;
    Ok(out.ids)
}

/// One multinomial draw per step from the full mixture.
pub fn sample_decode<R: Rng + ?Sized>(
    params: &ModelParameters,
    source: &EncodedSource,
    max_len: usize,
    rng: &mut R,
) -> Result<Decoded> {
    run(params, source, max_len, |m| {
        Ok(sample_categorical(&m.mixture, rng)? as u32)
    })
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::NonFinite {
        stage: "sampling",
        detail: e.to_string(),
    })?;
    Ok(dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::super::params::{Block, ModelDims};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> ModelParameters {
        ModelParameters::init_uniform(ModelDims::new(10, 4), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn source() -> EncodedSource {
        EncodedSource {
            ids: vec![4, 5, UNK],
            ext: vec![4, 5, 10],
            oov: vec!["zzz".into()],
        }
    }

    #[test]
    fn greedy_truncates_and_is_deterministic() {
        let p = model(1);
        assert_eq!(greedy_decode(&p, &source(), 1).unwrap().len(), 1);
        let a = greedy_decode(&p, &source(), 20).unwrap();
        assert_eq!(a, greedy_decode(&p, &source(), 20).unwrap());
        assert!(a.len() <= 20);
        assert!(greedy_decode(&p, &source(), 0).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn unk_argmax_replaced_by_attended_source_token() {
        let mut p = model(2);
        p.block_mut(Block::GateB)[0] = -1e4;
        p.block_mut(Block::OutB)[UNK as usize] = 50.0;
        let out = greedy_decode(&p, &source(), 3).unwrap();
        assert!(out.iter().all(|&y| y != UNK));
        assert!(out.iter().all(|y| source().ext.contains(y)));
    }

    #[test]
    fn one_hot_sampling_equals_greedy() {
        let mut p = model(3);
        p.block_mut(Block::GateB)[0] = -1e4;
        p.block_mut(Block::OutB)[7] = 1e3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_decode(&p, &source(), 5, &mut rng).unwrap();
        assert_eq!(s.ids, greedy_decode(&p, &source(), 5).unwrap());
        assert!(s.log_probs.iter().all(|&lp| lp == 0.0));
    }

    #[test]
    fn sampling_reproducible_and_log_probs_match() {
        let p = model(4);
        let a = sample_decode(&p, &source(), 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_decode(&p, &source(), 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let forced = super::super::model::target_log_probs(&p, &source(), &a.ids).unwrap();
        for (x, y) in forced.iter().zip(&a.log_probs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[sample_categorical(&[0.5, 0.3, 0.2], &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 0.3, 0.2]) {
            assert!((*c as f64 / 10_000.0 - p).abs() < 0.02, "{counts:?}");
        }
    }
}
