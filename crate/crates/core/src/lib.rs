//! Reinforced query reformulation with pre-retrieval QPP rewards, plus the
//! indexing, ranking and evaluation stack around it.

pub mod error;
pub mod eval;
pub mod index;
pub mod mining;
pub mod qpp;
pub mod ranking;
pub mod rl;
pub mod seq2seq;
pub mod text;

pub use error::{Error, Result};
