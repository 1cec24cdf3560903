//! Bidirectional GRU encoder, GRU decoder with attention and a copy gate,
//! trained by teacher-forced maximum likelihood.
//!
//! Parameters live in one flat vector (see [`Block`]) and gradients are
//! computed by hand-written reverse mode. All arithmetic is `f64`.

mod checkpoint;
mod decode;
mod model;
mod params;
mod train;
mod vocab;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use decode::{greedy_decode, sample_categorical, sample_decode, Decoded, DEFAULT_MAX_LEN};
pub use model::{
    accumulate_nll_grad, accumulate_policy_grad, attention_context, decode_step, encode,
    initial_state, sequence_nll, target_log_probs, CopyMixture, Dropout, EncoderStates,
    SequenceLoss,
};
pub use params::{Block, ModelDims, ModelParameters, INIT_RANGE};
pub use train::{
    clip_global_norm, mean_token_loss, prepare_examples, train_ml, write_ml_history, Adam,
    AdamConfig, Example, MlConfig, MlEpoch, MlOutcome,
};
pub use vocab::{
    EncodedSource, Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};
