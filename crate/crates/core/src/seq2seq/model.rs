//! Forward pass and hand-written reverse mode for the copy-attention GRU
//! encoder-decoder.

use rand::{Rng, RngCore};

use super::params::{GruLayout, Layout, ModelParameters};
use super::vocab::{EncodedSource, BOS, PAD, UNK};
use crate::error::{Error, Result};

fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_add(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for (r, &yr) in y.iter().enumerate().take(rows) {
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yr;
        }
    }
}

fn outer_add(g: &mut [f64], rows: usize, cols: usize, y: &[f64], x: &[f64]) {
    for (r, &yr) in y.iter().enumerate().take(rows) {
        if yr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (o, b) in row.iter_mut().zip(x) {
            *o += yr * b;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// Inverted dropout. Each call draws a fresh mask of `0` or `1/(1-rate)`.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}

fn maybe_mask(drop: &mut Option<Dropout<'_>>, v: &mut [f64]) -> Option<Vec<f64>> {
    let d = drop.as_mut().filter(|d| d.rate > 0.0)?;
    let m = d.mask(v.len());
    for (x, k) in v.iter_mut().zip(&m) {
        *x *= k;
    }
    Some(m)
}

fn apply_mask(mask: &Option<Vec<f64>>, v: &mut [f64]) {
    if let Some(m) = mask {
        for (x, k) in v.iter_mut().zip(m) {
            *x *= k;
        }
    }
}

struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

fn gru_forward(p: &[f64], g: &GruLayout, x: Vec<f64>, h: &[f64]) -> (Vec<f64>, GruCache) {
    let hs = g.hidden;
    let gs = 3 * hs;
    let mut gi = p[g.bi..g.bi + gs].to_vec();
    matvec_add(&p[g.wi..g.wi + gs * g.input], gs, g.input, &x, &mut gi);
    let mut gh = p[g.bh..g.bh + gs].to_vec();
    matvec_add(&p[g.wh..g.wh + gs * hs], gs, hs, h, &mut gh);
    let mut r = vec![0.0; hs];
    let mut z = vec![0.0; hs];
    let mut n = vec![0.0; hs];
    let mut out = vec![0.0; hs];
    for j in 0..hs {
        r[j] = sigmoid(gi[j] + gh[j]);
        z[j] = sigmoid(gi[hs + j] + gh[hs + j]);
        n[j] = (gi[2 * hs + j] + r[j] * gh[2 * hs + j]).tanh();
        out[j] = (1.0 - z[j]) * n[j] + z[j] * h[j];
    }
    let hn = gh[2 * hs..].to_vec();
    (
        out,
        GruCache {
            x,
            h: h.to_vec(),
            r,
            z,
            n,
            hn,
        },
    )
}

/// Adds parameter gradients into `grad` and input/state gradients into `dx`/`dh`.
fn gru_backward(
    p: &[f64],
    grad: &mut [f64],
    g: &GruLayout,
    c: &GruCache,
    dout: &[f64],
    dx: &mut [f64],
    dh: &mut [f64],
) {
    let hs = g.hidden;
    let gs = 3 * hs;
    let mut dgi = vec![0.0; gs];
    let mut dgh = vec![0.0; gs];
    for j in 0..hs {
        let (r, z, n) = (c.r[j], c.z[j], c.n[j]);
        let dn = dout[j] * (1.0 - z);
        let dz = dout[j] * (c.h[j] - n);
        dh[j] += dout[j] * z;
        let dan = dn * (1.0 - n * n);
        let dar = dan * c.hn[j] * r * (1.0 - r);
        let daz = dz * z * (1.0 - z);
        dgi[j] = dar;
        dgi[hs + j] = daz;
        dgi[2 * hs + j] = dan;
        dgh[j] = dar;
        dgh[hs + j] = daz;
        dgh[2 * hs + j] = dan * r;
    }
    outer_add(
        &mut grad[g.wi..g.wi + gs * g.input],
        gs,
        g.input,
        &dgi,
        &c.x,
    );
    add_into(&mut grad[g.bi..g.bi + gs], &dgi);
    matvec_t_add(&p[g.wi..g.wi + gs * g.input], gs, g.input, &dgi, dx);
    outer_add(&mut grad[g.wh..g.wh + gs * hs], gs, hs, &dgh, &c.h);
    add_into(&mut grad[g.bh..g.bh + gs], &dgh);
    matvec_t_add(&p[g.wh..g.wh + gs * hs], gs, hs, &dgh, dh);
}

fn embedding(p: &[f64], l: &Layout, id: u32) -> Vec<f64> {
    let id = if (id as usize) < l.dims.vocab_size {
        id
    } else {
        UNK
    };
    let e = l.dims.emb_dim;
    let start = l.emb + id as usize * e;
    p[start..start + e].to_vec()
}

fn embedding_grad(grad: &mut [f64], l: &Layout, id: u32, d: &[f64]) {
    let id = if (id as usize) < l.dims.vocab_size {
        id
    } else {
        UNK
    };
    let e = l.dims.emb_dim;
    let start = l.emb + id as usize * e;
    add_into(&mut grad[start..start + e], d);
}

/// Encoder outputs `h_i = [f_i; b_i]`, one per source position.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Vec<Vec<f64>>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

struct EncoderTrace {
    ids: Vec<u32>,
    emb_masks: Vec<Option<Vec<f64>>>,
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
    out_masks: Vec<Option<Vec<f64>>>,
    bridge_in: Vec<f64>,
    s0: Vec<f64>,
}

fn run_encoder(
    p: &[f64],
    l: &Layout,
    ids: &[u32],
    drop: &mut Option<Dropout<'_>>,
) -> Result<(EncoderStates, EncoderTrace)> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("source sequence"));
    }
    let n = ids.len();
    let h = l.dims.hidden;
    let mut xs = Vec::with_capacity(n);
    let mut emb_masks = Vec::with_capacity(n);
    for &id in ids {
        let mut x = embedding(p, l, id);
        emb_masks.push(maybe_mask(drop, &mut x));
        xs.push(x);
    }
    let mut fwd = Vec::with_capacity(n);
    let mut f_states = Vec::with_capacity(n);
    let mut prev = vec![0.0; h];
    for x in &xs {
        let (out, cache) = gru_forward(p, &l.enc_f, x.clone(), &prev);
        fwd.push(cache);
        f_states.push(out.clone());
        prev = out;
    }
    let mut bwd: Vec<Option<GruCache>> = (0..n).map(|_| None).collect();
    let mut b_states = vec![Vec::new(); n];
    let mut prev = vec![0.0; h];
    for i in (0..n).rev() {
        let (out, cache) = gru_forward(p, &l.enc_b, xs[i].clone(), &prev);
        bwd[i] = Some(cache);
        b_states[i] = out.clone();
        prev = out;
    }
    let mut bridge_in = f_states[n - 1].clone();
    bridge_in.extend_from_slice(&b_states[0]);
    let mut s0 = p[l.bridge_b..l.bridge_b + h].to_vec();
    matvec_add(
        &p[l.bridge_w..l.bridge_w + 2 * h * h],
        h,
        2 * h,
        &bridge_in,
        &mut s0,
    );
    for v in &mut s0 {
        *v = v.tanh();
    }
    let mut states = Vec::with_capacity(n);
    let mut out_masks = Vec::with_capacity(n);
    for (f, b) in f_states.into_iter().zip(b_states) {
        let mut hi = f;
        hi.extend(b);
        out_masks.push(maybe_mask(drop, &mut hi));
        states.push(hi);
    }
    Ok((
        EncoderStates { states },
        EncoderTrace {
            ids: ids.to_vec(),
            emb_masks,
            fwd,
            bwd: bwd.into_iter().map(Option::unwrap).collect(),
            out_masks,
            bridge_in,
            s0,
        },
    ))
}

fn encoder_backward(
    p: &[f64],
    l: &Layout,
    t: &EncoderTrace,
    mut d_states: Vec<Vec<f64>>,
    ds0: &[f64],
    grad: &mut [f64],
) {
    let h = l.dims.hidden;
    let e = l.dims.emb_dim;
    let n = t.ids.len();

    let mut da = vec![0.0; h];
    for j in 0..h {
        da[j] = ds0[j] * (1.0 - t.s0[j] * t.s0[j]);
    }
    outer_add(
        &mut grad[l.bridge_w..l.bridge_w + 2 * h * h],
        h,
        2 * h,
        &da,
        &t.bridge_in,
    );
    add_into(&mut grad[l.bridge_b..l.bridge_b + h], &da);
    let mut d_bridge_in = vec![0.0; 2 * h];
    matvec_t_add(
        &p[l.bridge_w..l.bridge_w + 2 * h * h],
        h,
        2 * h,
        &da,
        &mut d_bridge_in,
    );

    for (d, m) in d_states.iter_mut().zip(&t.out_masks) {
        apply_mask(m, d);
    }
    let mut dxs = vec![vec![0.0; e]; n];
    let mut carry = vec![0.0; h];
    for i in (0..n).rev() {
        let mut dout = d_states[i][..h].to_vec();
        add_into(&mut dout, &carry);
        if i == n - 1 {
            add_into(&mut dout, &d_bridge_in[..h]);
        }
        let mut dprev = vec![0.0; h];
        gru_backward(p, grad, &l.enc_f, &t.fwd[i], &dout, &mut dxs[i], &mut dprev);
        carry = dprev;
    }
    let mut carry = vec![0.0; h];
    for i in 0..n {
        let mut dout = d_states[i][h..].to_vec();
        add_into(&mut dout, &carry);
        if i == 0 {
            add_into(&mut dout, &d_bridge_in[h..]);
        }
        let mut dprev = vec![0.0; h];
        gru_backward(p, grad, &l.enc_b, &t.bwd[i], &dout, &mut dxs[i], &mut dprev);
        carry = dprev;
    }
    for ((dx, m), &id) in dxs.iter_mut().zip(&t.emb_masks).zip(&t.ids) {
        apply_mask(m, dx);
        embedding_grad(grad, l, id, dx);
    }
}

/// Bilinear scores `e_i = s^T W_a h_i`, softmax, and the context vector.
fn attend(p: &[f64], l: &Layout, s: &[f64], enc: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = l.dims.hidden;
    let mut u = vec![0.0; 2 * h];
    matvec_t_add(&p[l.attn..l.attn + 2 * h * h], h, 2 * h, s, &mut u);
    let scores: Vec<f64> = enc.iter().map(|hi| dot(&u, hi)).collect();
    let alpha = softmax(&scores);
    let mut c = vec![0.0; 2 * h];
    for (a, hi) in alpha.iter().zip(enc) {
        for (cj, x) in c.iter_mut().zip(hi) {
            *cj += a * x;
        }
    }
    (u, alpha, c)
}

struct StepTrace {
    input: u32,
    emb_mask: Option<Vec<f64>>,
    gru: GruCache,
    s: Vec<f64>,
    s_mask: Option<Vec<f64>>,
    sd: Vec<f64>,
    u: Vec<f64>,
    alpha: Vec<f64>,
    c: Vec<f64>,
    p_gen: Vec<f64>,
    gate: f64,
}

fn decoder_step(
    p: &[f64],
    l: &Layout,
    prev: u32,
    state: &[f64],
    enc: &[Vec<f64>],
    drop: &mut Option<Dropout<'_>>,
) -> StepTrace {
    let h = l.dims.hidden;
    let v = l.dims.vocab_size;
    let mut x = embedding(p, l, prev);
    let emb_mask = maybe_mask(drop, &mut x);
    let (s, gru) = gru_forward(p, &l.dec, x, state);
    let mut sd = s.clone();
    let s_mask = maybe_mask(drop, &mut sd);
    let (u, alpha, c) = attend(p, l, &sd, enc);
    let mut o = sd.clone();
    o.extend_from_slice(&c);
    let mut logits = p[l.out_b..l.out_b + v].to_vec();
    matvec_add(&p[l.out_w..l.out_w + v * 3 * h], v, 3 * h, &o, &mut logits);
    let p_gen = softmax(&logits);
    let gate = sigmoid(dot(&p[l.gate_w..l.gate_w + 3 * h], &o) + p[l.gate_b]);
    StepTrace {
        input: prev,
        emb_mask,
        gru,
        s,
        s_mask,
        sd,
        u,
        alpha,
        c,
        p_gen,
        gate,
    }
}

/// `p(y) = q * sum_{i: ext_i = y} alpha_i + (1 - q) * p_gen(y)`.
fn mixture_prob(t: &StepTrace, ext: &[u32], y: u32) -> (f64, f64, f64) {
    let pg = t.p_gen.get(y as usize).copied().unwrap_or(0.0);
    let cp: f64 = ext
        .iter()
        .zip(&t.alpha)
        .filter(|(&e, _)| e == y)
        .map(|(_, a)| a)
        .sum();
    ((1.0 - t.gate) * pg + t.gate * cp, pg, cp)
}

/// Gate, generation, copy and combined distributions for one step. The
/// combined distribution runs over the extended vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyMixture {
    pub gate: f64,
    pub generation: Vec<f64>,
    pub copy: Vec<f64>,
    pub mixture: Vec<f64>,
}

fn to_mixture(t: &StepTrace, source: &EncodedSource) -> CopyMixture {
    let v = t.p_gen.len();
    let mut mixture = vec![0.0; v + source.oov.len()];
    for (m, pg) in mixture.iter_mut().zip(&t.p_gen) {
        *m = (1.0 - t.gate) * pg;
    }
    for (&e, a) in source.ext.iter().zip(&t.alpha) {
        mixture[e as usize] += t.gate * a;
    }
    CopyMixture {
        gate: t.gate,
        generation: t.p_gen.clone(),
        copy: t.alpha.clone(),
        mixture,
    }
}

pub fn encode(params: &ModelParameters, source: &[u32]) -> Result<EncoderStates> {
    Ok(run_encoder(params.as_slice(), &params.layout(), source, &mut None)?.0)
}

/// Decoder state before the first step, `tanh(W [f_N; b_1] + b)`.
pub fn initial_state(params: &ModelParameters, enc: &EncoderStates) -> Vec<f64> {
    let l = params.layout();
    let p = params.as_slice();
    let h = l.dims.hidden;
    let n = enc.states.len();
    let mut input = enc.states[n - 1][..h].to_vec();
    input.extend_from_slice(&enc.states[0][h..]);
    let mut s0 = p[l.bridge_b..l.bridge_b + h].to_vec();
    matvec_add(
        &p[l.bridge_w..l.bridge_w + 2 * h * h],
        h,
        2 * h,
        &input,
        &mut s0,
    );
    s0.iter().map(|v| v.tanh()).collect()
}

/// Attention distribution over source positions and the context vector.
pub fn attention_context(
    params: &ModelParameters,
    state: &[f64],
    enc: &EncoderStates,
) -> (Vec<f64>, Vec<f64>) {
    let (_, alpha, c) = attend(params.as_slice(), &params.layout(), state, &enc.states);
    (alpha, c)
}

pub fn decode_step(
    params: &ModelParameters,
    prev: u32,
    state: &[f64],
    enc: &EncoderStates,
    source: &EncodedSource,
) -> (CopyMixture, Vec<f64>) {
    let t = decoder_step(
        params.as_slice(),
        &params.layout(),
        prev,
        state,
        &enc.states,
        &mut None,
    );
    (to_mixture(&t, source), t.s)
}

/// Un-normalised loss of one sequence: the summed NLL over non-PAD targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLoss {
    pub nll: f64,
    pub tokens: usize,
}

/// Teacher-forced pass over `targets` that adds `weight * d(NLL)/d(params)`
/// into `grad`. PAD targets contribute nothing. With `weight == 0` only the
/// forward pass runs.
pub fn accumulate_nll_grad(
    params: &ModelParameters,
    source: &EncodedSource,
    targets: &[u32],
    weight: f64,
    dropout: Option<Dropout<'_>>,
    grad: &mut [f64],
) -> Result<SequenceLoss> {
    nll_grad(params, source, targets, weight, dropout, grad, true)
}

/// Like [`accumulate_nll_grad`] but for sampled action sequences: every
/// position counts, including a sampled PAD.
pub fn accumulate_policy_grad(
    params: &ModelParameters,
    source: &EncodedSource,
    actions: &[u32],
    weight: f64,
    grad: &mut [f64],
) -> Result<SequenceLoss> {
    nll_grad(params, source, actions, weight, None, grad, false)
}

fn nll_grad(
    params: &ModelParameters,
    source: &EncodedSource,
    targets: &[u32],
    weight: f64,
    mut dropout: Option<Dropout<'_>>,
    grad: &mut [f64],
    mask_pad: bool,
) -> Result<SequenceLoss> {
    let l = params.layout();
    let p = params.as_slice();
    let h = l.dims.hidden;
    let v = l.dims.vocab_size;
    debug_assert!(weight == 0.0 || grad.len() == p.len());

    let (enc, etrace) = run_encoder(p, &l, &source.ids, &mut dropout)?;
    let mut steps = Vec::with_capacity(targets.len());
    let mut state = etrace.s0.clone();
    let mut prev = BOS;
    let mut loss = SequenceLoss {
        nll: 0.0,
        tokens: 0,
    };
    for &y in targets {
        let t = decoder_step(p, &l, prev, &state, &enc.states, &mut dropout);
        if !(mask_pad && y == PAD) {
            let (prob, _, _) = mixture_prob(&t, &source.ext, y);
            let nll = -prob.ln();
            if !nll.is_finite() {
                return Err(Error::NonFinite {
                    stage: "sequence nll",
                    detail: format!("p(target {y}) = {prob} at step {}", steps.len()),
                });
            }
            loss.nll += nll;
            loss.tokens += 1;
        }
        state = t.s.clone();
        prev = y;
        steps.push(t);
    }
    if weight == 0.0 {
        return Ok(loss);
    }

    let n = source.len();
    let mut d_states = vec![vec![0.0; 2 * h]; n];
    let mut carry = vec![0.0; h];
    for (t, &y) in steps.iter().zip(targets).rev() {
        let mut dsd = vec![0.0; h];
        if !(mask_pad && y == PAD) {
            let (prob, pg, cp) = mixture_prob(t, &source.ext, y);
            let g = -weight / prob;
            let q = t.gate;
            let dq_pre = g * (cp - pg) * q * (1.0 - q);

            let mut o = t.sd.clone();
            o.extend_from_slice(&t.c);
            let mut d_o = vec![0.0; 3 * h];
            for (d, w) in d_o.iter_mut().zip(&p[l.gate_w..l.gate_w + 3 * h]) {
                *d += dq_pre * w;
            }
            for (gw, x) in grad[l.gate_w..l.gate_w + 3 * h].iter_mut().zip(&o) {
                *gw += dq_pre * x;
            }
            grad[l.gate_b] += dq_pre;

            if (y as usize) < v {
                let scale = g * (1.0 - q) * pg;
                let dlogits: Vec<f64> = t
                    .p_gen
                    .iter()
                    .enumerate()
                    .map(|(k, pk)| scale * (if k == y as usize { 1.0 } else { 0.0 } - pk))
                    .collect();
                outer_add(
                    &mut grad[l.out_w..l.out_w + v * 3 * h],
                    v,
                    3 * h,
                    &dlogits,
                    &o,
                );
                add_into(&mut grad[l.out_b..l.out_b + v], &dlogits);
                matvec_t_add(
                    &p[l.out_w..l.out_w + v * 3 * h],
                    v,
                    3 * h,
                    &dlogits,
                    &mut d_o,
                );
            }

            let dc = &d_o[h..];
            let mut dalpha: Vec<f64> = source
                .ext
                .iter()
                .map(|&e| if e == y { g * q } else { 0.0 })
                .collect();
            for (i, hi) in enc.states.iter().enumerate() {
                dalpha[i] += dot(dc, hi);
                for (d, c) in d_states[i].iter_mut().zip(dc) {
                    *d += t.alpha[i] * c;
                }
            }
            let mean = dot(&t.alpha, &dalpha);
            let mut du = vec![0.0; 2 * h];
            for (i, hi) in enc.states.iter().enumerate() {
                let de = t.alpha[i] * (dalpha[i] - mean);
                if de == 0.0 {
                    continue;
                }
                for (d, x) in du.iter_mut().zip(hi) {
                    *d += de * x;
                }
                for (d, x) in d_states[i].iter_mut().zip(&t.u) {
                    *d += de * x;
                }
            }
            outer_add(&mut grad[l.attn..l.attn + 2 * h * h], h, 2 * h, &t.sd, &du);
            dsd.copy_from_slice(&d_o[..h]);
            matvec_add(&p[l.attn..l.attn + 2 * h * h], h, 2 * h, &du, &mut dsd);
            apply_mask(&t.s_mask, &mut dsd);
        }
        add_into(&mut dsd, &carry);
        let mut dx = vec![0.0; l.dims.emb_dim];
        let mut dprev = vec![0.0; h];
        gru_backward(p, grad, &l.dec, &t.gru, &dsd, &mut dx, &mut dprev);
        apply_mask(&t.emb_mask, &mut dx);
        embedding_grad(grad, &l, t.input, &dx);
        carry = dprev;
    }
    encoder_backward(p, &l, &etrace, d_states, &carry, grad);
    Ok(loss)
}

/// Per-token average NLL of `target` (which must end in EOS) and its gradient.
pub fn sequence_nll(
    params: &ModelParameters,
    source: &EncodedSource,
    target: &[u32],
) -> Result<(f64, Vec<f64>)> {
    if target.is_empty() {
        return Err(Error::EmptyInput("target sequence"));
    }
    if target.last() != Some(&super::vocab::EOS) {
        return Err(Error::InvalidArgument("target must end with EOS".into()));
    }
    let non_pad = target.iter().filter(|&&y| y != PAD).count();
    if non_pad == 0 {
        return Err(Error::EmptyInput("target has only PAD tokens"));
    }
    let mut grad = vec![0.0; params.len()];
    let loss = accumulate_nll_grad(
        params,
        source,
        target,
        1.0 / non_pad as f64,
        None,
        &mut grad,
    )?;
    Ok((loss.nll / loss.tokens as f64, grad))
}

/// Teacher-forced `log p(y_t | y_<t)` for every target position.
pub fn target_log_probs(
    params: &ModelParameters,
    source: &EncodedSource,
    target: &[u32],
) -> Result<Vec<f64>> {
    let l = params.layout();
    let p = params.as_slice();
    let (enc, trace) = run_encoder(p, &l, &source.ids, &mut None)?;
    let mut state = trace.s0;
    let mut prev = BOS;
    let mut out = Vec::with_capacity(target.len());
    for &y in target {
        let t = decoder_step(p, &l, prev, &state, &enc.states, &mut None);
        out.push(mixture_prob(&t, &source.ext, y).0.ln());
        state = t.s;
        prev = y;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::params::{Block, ModelDims};
    use super::super::vocab::EOS;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64, v: usize, h: usize) -> ModelParameters {
        let dims = ModelDims {
            vocab_size: v,
            emb_dim: h + 1,
            hidden: h,
        };
        let mut p = ModelParameters::init_uniform(dims, &mut ChaCha8Rng::seed_from_u64(seed));
        for x in p.as_mut_slice() {
            *x *= 5.0;
        }
        p
    }

    fn src(ids: &[u32], v: u32) -> EncodedSource {
        let mut oov = Vec::new();
        let ext: Vec<u32> = ids.to_vec();
        let ids = ids
            .iter()
            .map(|&i| {
                if i >= v {
                    let name = format!("oov{}", i - v);
                    if !oov.contains(&name) {
                        oov.push(name);
                    }
                    UNK
                } else {
                    i
                }
            })
            .collect();
        EncodedSource { ids, ext, oov }
    }

    /// Independent scalar recurrence for one GRU direction.
    fn oracle_gru(p: &[f64], g: &GruLayout, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hs = g.hidden;
        let w = |base: usize, cols: usize, r: usize, c: usize| p[base + r * cols + c];
        let mut h = vec![0.0; hs];
        let mut out = Vec::new();
        for x in xs {
            let mut next = vec![0.0; hs];
            for j in 0..hs {
                let gate = |k: usize| {
                    let row = k * hs + j;
                    let mut a = p[g.bi + row];
                    for c in 0..g.input {
                        a += w(g.wi, g.input, row, c) * x[c];
                    }
                    let mut b = p[g.bh + row];
                    for c in 0..hs {
                        b += w(g.wh, hs, row, c) * h[c];
                    }
                    (a, b)
                };
                let (ar, br) = gate(0);
                let (az, bz) = gate(1);
                let (an, bn) = gate(2);
                let r = 1.0 / (1.0 + (-(ar + br)).exp());
                let z = 1.0 / (1.0 + (-(az + bz)).exp());
                let n = (an + r * bn).tanh();
                next[j] = (1.0 - z) * n + z * h[j];
            }
            h = next;
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn encoder_matches_scalar_recurrence() {
        let params = tiny(1, 9, 3);
        let l = params.layout();
        let p = params.as_slice();
        let ids = [4u32, 7, 5, 8];
        let enc = encode(&params, &ids).unwrap();
        let xs: Vec<Vec<f64>> = ids.iter().map(|&i| embedding(p, &l, i)).collect();
        let f = oracle_gru(p, &l.enc_f, &xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut b = oracle_gru(p, &l.enc_b, &rev);
        b.reverse();
        for i in 0..ids.len() {
            for j in 0..3 {
                assert!((enc.states[i][j] - f[i][j]).abs() < 1e-14);
                assert!((enc.states[i][3 + j] - b[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_params_give_equal_zero_states() {
        let params = ModelParameters::zeros(ModelDims::new(8, 4));
        let enc = encode(&params, &[4, 5, 6]).unwrap();
        // r = z = 1/2, n = tanh(0) = 0, so h stays at 0 from h_0 = 0.
        for s in &enc.states {
            assert_eq!(s, &enc.states[0]);
            assert!(s.iter().all(|&x| x == 0.0));
        }
        assert_eq!(encode(&params, &[4]).unwrap().len(), 1);
        assert!(encode(&params, &[]).is_err());
    }

    #[test]
    fn bidirectional_states_depend_on_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..20 {
            let params = tiny(seed, 12, 4);
            let len = rng.gen_range(2..6);
            let mut s: Vec<u32> = (0..len).map(|_| rng.gen_range(4..12)).collect();
            if s.iter().eq(s.iter().rev()) {
                s[0] = if s[0] == 4 { 5 } else { 4 };
            }
            let rev: Vec<u32> = s.iter().rev().copied().collect();
            assert_ne!(encode(&params, &s).unwrap(), encode(&params, &rev).unwrap());
        }
    }

    #[test]
    fn attention_edge_cases() {
        let params = tiny(2, 8, 3);
        let same = EncoderStates {
            states: vec![vec![0.3, -0.1, 0.2, 0.5, 0.0, 1.0]; 4],
        };
        let (alpha, _) = attention_context(&params, &[0.1, 0.2, 0.3], &same);
        assert!(alpha.iter().all(|a| (a - 0.25).abs() < 1e-15));
        let one = EncoderStates {
            states: vec![vec![0.3, -0.1, 0.2, 0.5, 0.0, 1.0]],
        };
        let (alpha, c) = attention_context(&params, &[0.1, 0.2, 0.3], &one);
        assert_eq!(alpha, [1.0]);
        assert_eq!(c, one.states[0]);
    }

    #[test]
    fn gate_boundaries() {
        let mut params = tiny(3, 8, 3);
        let source = src(&[4, 8, 5], 8);
        let enc = encode(&params, &source.ids).unwrap();
        let s0 = initial_state(&params, &enc);

        params.block_mut(Block::GateB)[0] = -1e4;
        let (m, _) = decode_step(&params, BOS, &s0, &enc, &source);
        assert_eq!(m.gate, 0.0);
        assert_eq!(&m.mixture[..8], &m.generation[..]);
        assert_eq!(m.mixture[8], 0.0);

        params.block_mut(Block::GateB)[0] = 1e4;
        let (m, _) = decode_step(&params, BOS, &s0, &enc, &source);
        assert_eq!(m.gate, 1.0);
        let mut scattered = vec![0.0; 9];
        for (&e, a) in source.ext.iter().zip(&m.copy) {
            scattered[e as usize] += a;
        }
        assert_eq!(m.mixture, scattered);
    }

    #[test]
    fn oov_copy_probability() {
        let mut params = tiny(4, 8, 3);
        let source = src(&[4, 8, 5, 8], 8);
        let enc = encode(&params, &source.ids).unwrap();
        let s0 = initial_state(&params, &enc);
        let (m, _) = decode_step(&params, BOS, &s0, &enc, &source);
        let expect = m.gate * (m.copy[1] + m.copy[3]);
        assert!(expect > 0.0);
        assert!((m.mixture[8] - expect).abs() < 1e-15);
        params.block_mut(Block::GateB)[0] = -1e4;
        let (m, _) = decode_step(&params, BOS, &s0, &enc, &source);
        assert_eq!(m.mixture[8], 0.0);
    }

    #[test]
    fn certain_and_uniform_losses() {
        let dims = ModelDims::new(7, 3);
        let mut params = ModelParameters::zeros(dims);
        params.block_mut(Block::GateB)[0] = -1e4;
        let source = src(&[4, 5], 7);
        let (loss, _) = sequence_nll(&params, &source, &[6, EOS]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);

        params.block_mut(Block::OutB)[EOS as usize] = 1e3;
        let (loss, _) = sequence_nll(&params, &source, &[EOS]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(sequence_nll(&params, &source, &[]).is_err());
        assert!(sequence_nll(&params, &source, &[4]).is_err());
    }

    #[test]
    fn pad_targets_are_masked() {
        let params = tiny(5, 9, 3);
        let source = src(&[4, 5, 6], 9);
        let with_pad = target_log_probs(&params, &source, &[7, PAD, EOS]).unwrap();
        let (loss, _) = sequence_nll(&params, &source, &[7, PAD, EOS]).unwrap();
        assert!((loss - -(with_pad[0] + with_pad[2]) / 2.0).abs() < 1e-12);
    }

    fn check_gradient(params: &ModelParameters, source: &EncodedSource, target: &[u32]) -> f64 {
        let (_, grad) = sequence_nll(params, source, target).unwrap();
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        let mut p = params.clone();
        for i in 0..p.len() {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + eps;
            let up = sequence_nll(&p, source, target).unwrap().0;
            p.as_mut_slice()[i] = orig - eps;
            let down = sequence_nll(&p, source, target).unwrap().0;
            p.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = tiny(6, 10, 3);
        let source = src(&[4, 10, 6, 10], 10);
        let worst = check_gradient(&params, &source, &[10, 7, 4, EOS]);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn dropout_gradient_matches_with_frozen_masks() {
        let params = tiny(7, 8, 3);
        let source = src(&[4, 5, 6], 8);
        let target = [6, 7, EOS];
        let loss_at = |p: &ModelParameters, grad: &mut [f64], w: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let d = Dropout {
                rate: 0.3,
                rng: &mut rng,
            };
            accumulate_nll_grad(p, &source, &target, w, Some(d), grad)
                .unwrap()
                .nll
        };
        let mut grad = vec![0.0; params.len()];
        loss_at(&params, &mut grad, 1.0);
        let mut scratch = vec![0.0; params.len()];
        let mut p = params.clone();
        for i in (0..p.len()).step_by(7) {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + 1e-5;
            let up = loss_at(&p, &mut scratch, 0.0);
            p.as_mut_slice()[i] = orig - 1e-5;
            let down = loss_at(&p, &mut scratch, 0.0);
            p.as_mut_slice()[i] = orig;
            let fd = (up - down) / 2e-5;
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "{i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn teacher_forcing_feeds_ground_truth() {
        // Push the decoder to always prefer token 4 so its own argmax never
        // matches the target after the first step.
        let mut params = tiny(8, 9, 3);
        params.block_mut(Block::OutB)[4] = 8.0;
        params.block_mut(Block::GateB)[0] = -1e4;
        let source = src(&[5, 6], 9);
        let target = [6u32, 7, 8, EOS];
        let forced = target_log_probs(&params, &source, &target).unwrap();

        let enc = encode(&params, &source.ids).unwrap();
        let mut state = initial_state(&params, &enc);
        let mut prev = BOS;
        let mut argmax_state = state.clone();
        let mut argmax_prev = BOS;
        let mut differs = false;
        for (t, &y) in target.iter().enumerate() {
            let (m, s) = decode_step(&params, prev, &state, &enc, &source);
            assert!((m.mixture[y as usize].ln() - forced[t]).abs() < 1e-12);
            let (m2, s2) = decode_step(&params, argmax_prev, &argmax_state, &enc, &source);
            differs |= (m2.mixture[y as usize].ln() - forced[t]).abs() > 1e-9;
            argmax_prev = 4;
            argmax_state = s2;
            state = s;
            prev = y;
        }
        assert!(differs);
    }
}
