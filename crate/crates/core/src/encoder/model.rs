//! Forward and reverse passes of the post-norm Transformer encoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, linear, linear_backward, View};
use super::{EncoderError, Gradients, ModelParams, Real, Tensor};
use crate::tokenizer::PackedInput;

const LAYER_NORM_EPS: f64 = 1e-12;
const MASK_PENALTY: f64 = -1e9;

/// A rectangular batch of packed sequences sharing one length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub seq_len: usize,
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub mask: Vec<u8>,
}

impl Batch {
    /// Stacks inputs, padding every sequence to the longest `ids` length.
    pub fn new(inputs: &[&PackedInput]) -> Self {
        let seq_len = inputs.iter().map(|p| p.ids.len()).max().unwrap_or(0);
        Self::build(inputs, seq_len)
    }

    /// Stacks inputs and drops the trailing columns that are padding in
    /// every sequence. Outputs at real positions are unaffected.
    pub fn trimmed(inputs: &[&PackedInput]) -> Self {
        let seq_len = inputs.iter().map(|p| p.real_len()).max().unwrap_or(0).max(1);
        Self::build(inputs, seq_len)
    }

    pub fn single(input: &PackedInput) -> Self {
        Self::new(&[input])
    }

    fn build(inputs: &[&PackedInput], seq_len: usize) -> Self {
        let size = inputs.len();
        let mut ids = vec![0u32; size * seq_len];
        let mut segments = vec![0u8; size * seq_len];
        let mut mask = vec![0u8; size * seq_len];
        for (b, input) in inputs.iter().enumerate() {
            let n = input.ids.len().min(seq_len);
            let base = b * seq_len;
            ids[base..base + n].copy_from_slice(&input.ids[..n]);
            segments[base..base + n].copy_from_slice(&input.segment_ids[..n]);
            mask[base..base + n].copy_from_slice(&input.attention_mask[..n]);
        }
        Self {
            size,
            seq_len,
            ids,
            segments,
            mask,
        }
    }

    pub fn rows(&self) -> usize {
        self.size * self.seq_len
    }

    /// Flat row index of position `pos` in sequence `b`.
    pub fn row(&self, b: usize, pos: usize) -> usize {
        b * self.seq_len + pos
    }
}

/// Whether dropout is active. Training mode carries the seed that fixes every
/// dropout mask, so a training forward pass is still reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Output vectors `(h_1, ..., h_M)` for each sequence of a batch, stacked
/// row-wise.
pub type HiddenStates<T = f32> = Tensor<T>;

#[derive(Debug, Clone)]
pub struct NormTrace<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Saved activations of one block.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    pub input: Tensor<T>,
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
    /// Softmax attention weights laid out `[batch][head][query][key]`.
    pub probs: Vec<T>,
    pub context: Tensor<T>,
    attn_dropout: Option<Vec<T>>,
    pub attn_norm: NormTrace<T>,
    pub attn_out: Tensor<T>,
    ff_pre: Tensor<T>,
    ff_act: Tensor<T>,
    ff_dropout: Option<Vec<T>>,
    pub ff_norm: NormTrace<T>,
}

impl<T: Real> LayerTrace<T> {
    /// Attention row of query `i` for sequence `b`, head `h`.
    pub fn attention_row(&self, heads: usize, seq_len: usize, b: usize, h: usize, i: usize) -> &[T] {
        let base = ((b * heads + h) * seq_len + i) * seq_len;
        &self.probs[base..base + seq_len]
    }
}

#[derive(Debug, Clone)]
pub struct Trace<T> {
    embed_dropout: Option<Vec<T>>,
    pub layers: Vec<LayerTrace<T>>,
}

fn check_batch<T: Real>(params: &ModelParams<T>, batch: &Batch) -> Result<(), EncoderError> {
    let config = &params.config;
    if batch.seq_len > config.max_positions {
        return Err(EncoderError::InputTooLong {
            len: batch.seq_len,
            max: config.max_positions,
        });
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(EncoderError::IdOutOfRange {
            id,
            vocab_size: config.vocab_size,
        });
    }
    if let Some(&s) = batch.segments.iter().find(|&&s| s > 1) {
        return Err(EncoderError::InvalidSegment(s));
    }
    Ok(())
}

struct Dropout {
    rng: Option<ChaCha8Rng>,
    rate: f64,
}

impl Dropout {
    fn new(mode: Mode, rate: f32) -> Self {
        let rng = match mode {
            Mode::Train { seed } if rate > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Self { rng, rate: rate as f64 }
    }

    /// Applies inverted dropout in place and returns the per-element scale.
    fn apply<T: Real>(&mut self, x: &mut Tensor<T>) -> Option<Vec<T>> {
        let rng = self.rng.as_mut()?;
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let scale: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        for (v, s) in x.data.iter_mut().zip(&scale) {
            *v *= *s;
        }
        Some(scale)
    }
}

fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> (Tensor<T>, NormTrace<T>) {
    let d = x.cols;
    let mut out = Tensor::zeros(x.rows, d);
    let mut normalized = Tensor::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.to_f64().unwrap() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let is = T::lit(1.0 / (var + LAYER_NORM_EPS).sqrt());
        let mean = T::lit(mean);
        let nrow = normalized.row_mut(r);
        for (n, v) in nrow.iter_mut().zip(row) {
            *n = (*v - mean) * is;
        }
        let orow = out.row_mut(r);
        for j in 0..d {
            orow[j] = nrow[j] * gain.data[j] + bias.data[j];
        }
        inv_std.push(is);
    }
    (out, NormTrace { normalized, inv_std })
}

fn layer_norm_backward<T: Real>(
    dy: &Tensor<T>,
    trace: &NormTrace<T>,
    gain: &Tensor<T>,
    dgain: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Tensor<T> {
    let d = dy.cols;
    let inv_d = T::lit(1.0 / d as f64);
    let mut dx = Tensor::zeros(dy.rows, d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows {
        let g = dy.row(r);
        let xhat = trace.normalized.row(r);
        let mut sum = T::zero();
        let mut sum_x = T::zero();
        for j in 0..d {
            dgain.data[j] += g[j] * xhat[j];
            dbias.data[j] += g[j];
            dxhat[j] = g[j] * gain.data[j];
            sum += dxhat[j];
            sum_x += dxhat[j] * xhat[j];
        }
        let mean = sum * inv_d;
        let mean_x = sum_x * inv_d;
        let is = trace.inv_std[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = is * (dxhat[j] - mean - xhat[j] * mean_x);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// `0.5 * (1 + tanh(u))` for the tanh GELU argument `u`, written as the
/// logistic of `2u` so that it costs one `exp`.
fn gelu_gate<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    T::one() / (T::one() + (-(u + u)).exp())
}

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    x * gelu_gate(x)
}

pub fn gelu_derivative<T: Real>(x: T) -> T {
    let s = gelu_gate(x);
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_K) * x * x);
    s + (x + x) * s * (T::one() - s) * du
}

fn embed<T: Real>(params: &ModelParams<T>, batch: &Batch) -> Tensor<T> {
    let d1 = params.config.hidden;
    let mut x = Tensor::zeros(batch.rows(), d1);
    for b in 0..batch.size {
        for pos in 0..batch.seq_len {
            let r = batch.row(b, pos);
            let tok = params.token_embedding.row(batch.ids[r] as usize);
            let seg = params.segment_embedding.row(batch.segments[r] as usize);
            let posv = params.position_embedding.row(pos);
            let out = x.row_mut(r);
            for j in 0..d1 {
                out[j] = tok[j] + seg[j] + posv[j];
            }
        }
    }
    x
}

fn attention_forward<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, batch: &Batch, heads: usize) -> (Vec<T>, Tensor<T>) {
    let m = batch.seq_len;
    let d1 = q.cols;
    let dh = d1 / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let penalty = T::lit(MASK_PENALTY);
    let mut probs = vec![T::zero(); batch.size * heads * m * m];
    let mut context = Tensor::zeros(q.rows, d1);
    for b in 0..batch.size {
        let row0 = b * m;
        let key_mask = &batch.mask[row0..row0 + m];
        for h in 0..heads {
            let poff = (b * heads + h) * m * m;
            let qv = View::block(row0 * d1 + h * dh, m, dh, d1);
            let kv = View::block(row0 * d1 + h * dh, m, dh, d1);
            gemm(scale, &q.data, qv, &k.data, kv.t(), T::zero(), &mut probs, View::dense(poff, m, m));
            for i in 0..m {
                let row = &mut probs[poff + i * m..poff + (i + 1) * m];
                for (s, &keep) in row.iter_mut().zip(key_mask) {
                    if keep == 0 {
                        *s += penalty;
                    }
                }
                softmax_in_place(row);
            }
            let vv = View::block(row0 * d1 + h * dh, m, dh, d1);
            let cv = View::block(row0 * d1 + h * dh, m, dh, d1);
            gemm(
                T::one(),
                &probs,
                View::dense(poff, m, m),
                &v.data,
                vv,
                T::zero(),
                &mut context.data,
                cv,
            );
        }
    }
    (probs, context)
}

/// Max-subtracted softmax over a row.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for s in row.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in row.iter_mut() {
        *s /= sum;
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Real>(
    d_context: &Tensor<T>,
    trace: &LayerTrace<T>,
    batch: &Batch,
    heads: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let m = batch.seq_len;
    let d1 = d_context.cols;
    let dh = d1 / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut dq = Tensor::zeros(d_context.rows, d1);
    let mut dk = Tensor::zeros(d_context.rows, d1);
    let mut dv = Tensor::zeros(d_context.rows, d1);
    let mut dp = vec![T::zero(); m * m];
    for b in 0..batch.size {
        let row0 = b * m;
        for h in 0..heads {
            let poff = (b * heads + h) * m * m;
            let blk = View::block(row0 * d1 + h * dh, m, dh, d1);
            let pv = View::dense(poff, m, m);
            // dP = dC V^T ; dV = P^T dC
            gemm(
                T::one(),
                &d_context.data,
                blk,
                &trace.value.data,
                blk.t(),
                T::zero(),
                &mut dp,
                View::dense(0, m, m),
            );
            gemm(T::one(), &trace.probs, pv.t(), &d_context.data, blk, T::zero(), &mut dv.data, blk);
            // dS = P * (dP - rowsum(dP * P))
            for i in 0..m {
                let p = &trace.probs[poff + i * m..poff + (i + 1) * m];
                let g = &mut dp[i * m..(i + 1) * m];
                let dot: T = p.iter().zip(g.iter()).map(|(a, b)| *a * *b).sum();
                for (gj, pj) in g.iter_mut().zip(p) {
                    *gj = *pj * (*gj - dot);
                }
            }
            gemm(scale, &dp, View::dense(0, m, m), &trace.key.data, blk, T::zero(), &mut dq.data, blk);
            gemm(
                scale,
                &dp,
                View::dense(0, m, m).t(),
                &trace.query.data,
                blk,
                T::zero(),
                &mut dk.data,
                blk,
            );
        }
    }
    (dq, dk, dv)
}

/// Runs the encoder over a batch, keeping every activation needed for the
/// reverse pass.
pub fn forward_traced<T: Real>(params: &ModelParams<T>, batch: &Batch, mode: Mode) -> Result<(HiddenStates<T>, Trace<T>), EncoderError> {
    check_batch(params, batch)?;
    let config = &params.config;
    let mut dropout = Dropout::new(mode, config.dropout);

    let mut x = embed(params, batch);
    let embed_dropout = dropout.apply(&mut x);
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let q = linear(&x, &lp.query_w, &lp.query_b);
        let k = linear(&x, &lp.key_w, &lp.key_b);
        let v = linear(&x, &lp.value_w, &lp.value_b);
        let (probs, context) = attention_forward(&q, &k, &v, batch, config.heads);
        let mut a = linear(&context, &lp.output_w, &lp.output_b);
        let attn_dropout = dropout.apply(&mut a);
        for (ai, xi) in a.data.iter_mut().zip(&x.data) {
            *ai += *xi;
        }
        let (y1, attn_norm) = layer_norm(&a, &lp.attn_norm_gain, &lp.attn_norm_bias);

        let ff_pre = linear(&y1, &lp.ff_in_w, &lp.ff_in_b);
        let mut ff_act = ff_pre.clone();
        ff_act.data.iter_mut().for_each(|z| *z = gelu(*z));
        let mut g = linear(&ff_act, &lp.ff_out_w, &lp.ff_out_b);
        let ff_dropout = dropout.apply(&mut g);
        for (gi, yi) in g.data.iter_mut().zip(&y1.data) {
            *gi += *yi;
        }
        let (out, ff_norm) = layer_norm(&g, &lp.ff_norm_gain, &lp.ff_norm_bias);

        let input = std::mem::replace(&mut x, out);
        layers.push(LayerTrace {
            input,
            query: q,
            key: k,
            value: v,
            probs,
            context,
            attn_dropout,
            attn_norm,
            attn_out: y1,
            ff_pre,
            ff_act,
            ff_dropout,
            ff_norm,
        });
    }
    Ok((x, Trace { embed_dropout, layers }))
}

/// Hidden states for a batch.
pub fn forward_batch<T: Real>(params: &ModelParams<T>, batch: &Batch, mode: Mode) -> Result<HiddenStates<T>, EncoderError> {
    forward_traced(params, batch, mode).map(|(h, _)| h)
}

/// Hidden states for one packed input; one row per input position.
pub fn forward<T: Real>(params: &ModelParams<T>, input: &PackedInput, train_mode: bool) -> Result<HiddenStates<T>, EncoderError> {
    let mode = if train_mode { Mode::Train { seed: 0 } } else { Mode::Eval };
    forward_batch(params, &Batch::single(input), mode)
}

fn mask_grad<T: Real>(g: &mut Tensor<T>, scale: &Option<Vec<T>>) {
    if let Some(s) = scale {
        for (gi, si) in g.data.iter_mut().zip(s) {
            *gi *= *si;
        }
    }
}

/// Back-propagates `d_hidden` through the encoder body, accumulating into
/// `grads`.
pub fn backward<T: Real>(params: &ModelParams<T>, batch: &Batch, trace: &Trace<T>, d_hidden: Tensor<T>, grads: &mut Gradients<T>) {
    let heads = params.config.heads;
    let mut d = d_hidden;
    for ((lp, lt), lg) in params.layers.iter().zip(&trace.layers).zip(grads.layers.iter_mut()).rev() {
        // out = LN2(y1 + dropout(ff(y1)))
        let d_r2 = layer_norm_backward(&d, &lt.ff_norm, &lp.ff_norm_gain, &mut lg.ff_norm_gain, &mut lg.ff_norm_bias);
        let mut d_g = d_r2.clone();
        mask_grad(&mut d_g, &lt.ff_dropout);
        let mut d_act = linear_backward(&lt.ff_act, &lp.ff_out_w, &d_g, &mut lg.ff_out_w, &mut lg.ff_out_b);
        for (da, z) in d_act.data.iter_mut().zip(&lt.ff_pre.data) {
            *da *= gelu_derivative(*z);
        }
        let d_y1_ff = linear_backward(&lt.attn_out, &lp.ff_in_w, &d_act, &mut lg.ff_in_w, &mut lg.ff_in_b);
        let mut d_y1 = d_r2;
        for (a, b) in d_y1.data.iter_mut().zip(&d_y1_ff.data) {
            *a += *b;
        }

        // y1 = LN1(x + dropout(attn(x)))
        let d_r1 = layer_norm_backward(
            &d_y1,
            &lt.attn_norm,
            &lp.attn_norm_gain,
            &mut lg.attn_norm_gain,
            &mut lg.attn_norm_bias,
        );
        let mut d_a = d_r1.clone();
        mask_grad(&mut d_a, &lt.attn_dropout);
        let d_context = linear_backward(&lt.context, &lp.output_w, &d_a, &mut lg.output_w, &mut lg.output_b);
        let (dq, dk, dv) = attention_backward(&d_context, lt, batch, heads);
        let mut d_x = d_r1;
        for (dproj, w, dw, db) in [
            (&dq, &lp.query_w, &mut lg.query_w, &mut lg.query_b),
            (&dk, &lp.key_w, &mut lg.key_w, &mut lg.key_b),
            (&dv, &lp.value_w, &mut lg.value_w, &mut lg.value_b),
        ] {
            let part = linear_backward(&lt.input, w, dproj, dw, db);
            for (a, b) in d_x.data.iter_mut().zip(&part.data) {
                *a += *b;
            }
        }
        d = d_x;
    }

    mask_grad(&mut d, &trace.embed_dropout);
    let d1 = params.config.hidden;
    for b in 0..batch.size {
        for pos in 0..batch.seq_len {
            let r = batch.row(b, pos);
            let g = &d.data[r * d1..(r + 1) * d1];
            for (dst, tensor_row) in [
                (&mut grads.token_embedding, batch.ids[r] as usize),
                (&mut grads.segment_embedding, batch.segments[r] as usize),
                (&mut grads.position_embedding, pos),
            ] {
                for (a, gj) in dst.row_mut(tensor_row).iter_mut().zip(g) {
                    *a += *gj;
                }
            }
        }
    }
}
