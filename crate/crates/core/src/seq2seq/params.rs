use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub const DEFAULT_HIDDEN: usize = 32;

    pub fn new(vocab_size: usize, hidden: usize) -> Self {
        ModelDims {
            vocab_size,
            emb_dim: hidden,
            hidden,
        }
    }
}

/// Every parameter tensor, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Embedding,
    EncFwdWi,
    EncFwdWh,
    EncFwdBi,
    EncFwdBh,
    EncBwdWi,
    EncBwdWh,
    EncBwdBi,
    EncBwdBh,
    BridgeW,
    BridgeB,
    DecWi,
    DecWh,
    DecBi,
    DecBh,
    AttnW,
    OutW,
    OutB,
    GateW,
    GateB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct GruLayout {
    pub wi: usize,
    pub wh: usize,
    pub bi: usize,
    pub bh: usize,
    pub input: usize,
    pub hidden: usize,
}

impl GruLayout {
    fn at(offset: usize, input: usize, hidden: usize) -> (Self, usize) {
        let g = 3 * hidden;
        let wi = offset;
        let wh = wi + g * input;
        let bi = wh + g * hidden;
        let bh = bi + g;
        (
            GruLayout {
                wi,
                wh,
                bi,
                bh,
                input,
                hidden,
            },
            bh + g,
        )
    }
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub dims: ModelDims,
    pub emb: usize,
    pub enc_f: GruLayout,
    pub enc_b: GruLayout,
    /// `hidden x 2*hidden`
    pub bridge_w: usize,
    pub bridge_b: usize,
    pub dec: GruLayout,
    /// `hidden x 2*hidden`, scores are `s^T W h_i`
    pub attn: usize,
    /// `vocab x 3*hidden` over `[s; c]`
    pub out_w: usize,
    pub out_b: usize,
    pub gate_w: usize,
    pub gate_b: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(dims: ModelDims) -> Self {
        let ModelDims {
            vocab_size: v,
            emb_dim: e,
            hidden: h,
        } = dims;
        let emb = 0;
        let (enc_f, next) = GruLayout::at(emb + v * e, e, h);
        let (enc_b, next) = GruLayout::at(next, e, h);
        let bridge_w = next;
        let bridge_b = bridge_w + h * 2 * h;
        let (dec, next) = GruLayout::at(bridge_b + h, e, h);
        let attn = next;
        let out_w = attn + h * 2 * h;
        let out_b = out_w + v * 3 * h;
        let gate_w = out_b + v;
        let gate_b = gate_w + 3 * h;
        Layout {
            dims,
            emb,
            enc_f,
            enc_b,
            bridge_w,
            bridge_b,
            dec,
            attn,
            out_w,
            out_b,
            gate_w,
            gate_b,
            len: gate_b + 1,
        }
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let ModelDims {
            vocab_size: v,
            emb_dim: e,
            hidden: h,
        } = self.dims;
        let g = 3 * h;
        let (start, len) = match block {
            Block::Embedding => (self.emb, v * e),
            Block::EncFwdWi => (self.enc_f.wi, g * e),
            Block::EncFwdWh => (self.enc_f.wh, g * h),
            Block::EncFwdBi => (self.enc_f.bi, g),
            Block::EncFwdBh => (self.enc_f.bh, g),
            Block::EncBwdWi => (self.enc_b.wi, g * e),
            Block::EncBwdWh => (self.enc_b.wh, g * h),
            Block::EncBwdBi => (self.enc_b.bi, g),
            Block::EncBwdBh => (self.enc_b.bh, g),
            Block::BridgeW => (self.bridge_w, h * 2 * h),
            Block::BridgeB => (self.bridge_b, h),
            Block::DecWi => (self.dec.wi, g * e),
            Block::DecWh => (self.dec.wh, g * h),
            Block::DecBi => (self.dec.bi, g),
            Block::DecBh => (self.dec.bh, g),
            Block::AttnW => (self.attn, h * 2 * h),
            Block::OutW => (self.out_w, v * 3 * h),
            Block::OutB => (self.out_b, v),
            Block::GateW => (self.gate_w, 3 * h),
            Block::GateB => (self.gate_b, 1),
        };
        start..start + len
    }
}

impl Block {
    pub const ALL: [Block; 20] = [
        Block::Embedding,
        Block::EncFwdWi,
        Block::EncFwdWh,
        Block::EncFwdBi,
        Block::EncFwdBh,
        Block::EncBwdWi,
        Block::EncBwdWh,
        Block::EncBwdBi,
        Block::EncBwdBh,
        Block::BridgeW,
        Block::BridgeB,
        Block::DecWi,
        Block::DecWh,
        Block::DecBi,
        Block::DecBh,
        Block::AttnW,
        Block::OutW,
        Block::OutB,
        Block::GateW,
        Block::GateB,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    dims: ModelDims,
    data: Vec<f64>,
}

impl ModelParameters {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParameters {
            dims,
            data: vec![0.0; Layout::new(dims).len],
        }
    }

    /// Uniform in `[-INIT_RANGE, INIT_RANGE]`.
    pub fn init_uniform<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for x in &mut p.data {
            *x = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
        p
    }

    pub fn from_vec(dims: ModelDims, data: Vec<f64>) -> Result<Self> {
        let p = ModelParameters { dims, data };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.vocab_size < 4 || d.emb_dim == 0 || d.hidden == 0 {
            return Err(Error::Checkpoint(format!("invalid dimensions {d:?}")));
        }
        let want = Layout::new(d).len;
        if self.data.len() != want {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match dimensions {d:?} (expected {want})",
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "non-finite parameter at offset {i}"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.data[self.layout().range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.layout().range(block);
        &mut self.data[r]
    }

    pub fn block_range(&self, block: Block) -> Range<usize> {
        self.layout().range(block)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
