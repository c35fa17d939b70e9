//! Output heads, the losses built on them, and gradient computation.

use super::model::{backward, forward_traced, Batch, HiddenStates, Mode};
use super::tensor::gemm;
use super::{EncoderError, Gradients, ModelParams, Real, Tensor};

/// Softmax of `logits / temperature`, computed in `f64` with max subtraction.
pub fn stable_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>, EncoderError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(EncoderError::InvalidTemperature(temperature));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(EncoderError::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// `ln(sum(exp(x)))` without overflow.
fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Masked-LM logits for every row of `hidden`: `hidden * W_mlm + b_mlm`.
pub fn mlm_logits<T: Real>(params: &ModelParams<T>, hidden: &HiddenStates<T>) -> Tensor<T> {
    let rows: Vec<usize> = (0..hidden.rows).collect();
    mlm_logits_rows(params, hidden, &rows)
}

/// Masked-LM logits for selected rows only.
pub fn mlm_logits_rows<T: Real>(params: &ModelParams<T>, hidden: &HiddenStates<T>, rows: &[usize]) -> Tensor<T> {
    let gathered = gather_rows(hidden, rows);
    let v = params.config.vocab_size;
    let mut out = Tensor::zeros(rows.len(), v);
    for r in 0..rows.len() {
        out.row_mut(r).copy_from_slice(&params.mlm_b.data);
    }
    let cv = out.view();
    gemm(
        T::one(),
        &gathered.data,
        gathered.view(),
        &params.mlm_w.data,
        params.mlm_w.view(),
        T::one(),
        &mut out.data,
        cv,
    );
    out
}

fn gather_rows<T: Real>(x: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(rows.len(), x.cols);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(x.row(r));
    }
    out
}

/// Back-propagates logit gradients for `rows` through the MLM head.
fn mlm_head_backward<T: Real>(
    params: &ModelParams<T>,
    hidden: &HiddenStates<T>,
    rows: &[usize],
    d_logits: &Tensor<T>,
    d_hidden: &mut Tensor<T>,
    grads: &mut Gradients<T>,
) {
    let gathered = gather_rows(hidden, rows);
    let cv = grads.mlm_w.view();
    gemm(
        T::one(),
        &gathered.data,
        gathered.view().t(),
        &d_logits.data,
        d_logits.view(),
        T::one(),
        &mut grads.mlm_w.data,
        cv,
    );
    for r in 0..d_logits.rows {
        for (acc, g) in grads.mlm_b.data.iter_mut().zip(d_logits.row(r)) {
            *acc += *g;
        }
    }
    let mut d_gathered = Tensor::zeros(rows.len(), hidden.cols);
    let cv = d_gathered.view();
    gemm(
        T::one(),
        &d_logits.data,
        d_logits.view(),
        &params.mlm_w.data,
        params.mlm_w.view().t(),
        T::zero(),
        &mut d_gathered.data,
        cv,
    );
    for (i, &r) in rows.iter().enumerate() {
        for (a, b) in d_hidden.row_mut(r).iter_mut().zip(d_gathered.row(i)) {
            *a += *b;
        }
    }
}

/// Relevance logit `W h_1 + b` of the first ([CLS]) position of each sequence.
pub fn scorer_logits<T: Real>(params: &ModelParams<T>, batch: &Batch, hidden: &HiddenStates<T>) -> Vec<f64> {
    (0..batch.size)
        .map(|b| {
            let h = hidden.row(batch.row(b, 0));
            let z: T = h.iter().zip(&params.scorer_w.data).map(|(x, w)| *x * *w).sum::<T>() + params.scorer_b.data[0];
            z.to_f64().unwrap()
        })
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A scalar loss over encoder outputs.
pub trait Objective<T: Real> {
    /// Returns the loss, writes `dL/dhidden` into `d_hidden` (zeroed by the
    /// caller) and accumulates head gradients into `grads`.
    fn evaluate(
        &self,
        params: &ModelParams<T>,
        batch: &Batch,
        hidden: &HiddenStates<T>,
        d_hidden: &mut Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<f64, EncoderError>;
}

/// A loss that ignores the model.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss(pub f64);

impl<T: Real> Objective<T> for ConstantLoss {
    fn evaluate(
        &self,
        _: &ModelParams<T>,
        _: &Batch,
        _: &HiddenStates<T>,
        _: &mut Tensor<T>,
        _: &mut Gradients<T>,
    ) -> Result<f64, EncoderError> {
        Ok(self.0)
    }
}

/// Mean binary cross-entropy of `sigmoid(W h_1 + b)` against 0/1 labels, one
/// label per sequence.
#[derive(Debug, Clone)]
pub struct ScorerBce {
    pub labels: Vec<f64>,
}

impl<T: Real> Objective<T> for ScorerBce {
    fn evaluate(
        &self,
        params: &ModelParams<T>,
        batch: &Batch,
        hidden: &HiddenStates<T>,
        d_hidden: &mut Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<f64, EncoderError> {
        if self.labels.len() != batch.size {
            return Err(EncoderError::LengthMismatch {
                expected: batch.size,
                actual: self.labels.len(),
            });
        }
        let n = batch.size.max(1) as f64;
        let logits = scorer_logits(params, batch, hidden);
        let mut loss = 0.0;
        for (b, (&z, &t)) in logits.iter().zip(&self.labels).enumerate() {
            // max(z, 0) - z t + ln(1 + e^-|z|)
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            let dz = T::lit((sigmoid(z) - t) / n);
            let r = batch.row(b, 0);
            grads.scorer_b.data[0] += dz;
            let h = hidden.row(r).to_vec();
            for (gw, x) in grads.scorer_w.data.iter_mut().zip(&h) {
                *gw += dz * *x;
            }
            for (dh, w) in d_hidden.row_mut(r).iter_mut().zip(&params.scorer_w.data) {
                *dh += dz * *w;
            }
        }
        Ok(loss / n)
    }
}

/// Standard masked-LM cross-entropy, averaged over the listed positions.
#[derive(Debug, Clone)]
pub struct MaskedLmLoss {
    /// `(flat row, original token id)` pairs.
    pub targets: Vec<(usize, u32)>,
}

impl<T: Real> Objective<T> for MaskedLmLoss {
    fn evaluate(
        &self,
        params: &ModelParams<T>,
        _batch: &Batch,
        hidden: &HiddenStates<T>,
        d_hidden: &mut Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<f64, EncoderError> {
        if self.targets.is_empty() {
            return Ok(0.0);
        }
        let rows: Vec<usize> = self.targets.iter().map(|t| t.0).collect();
        let mut logits = mlm_logits_rows(params, hidden, &rows);
        let n = self.targets.len() as f64;
        let mut loss = 0.0;
        for (i, &(_, target)) in self.targets.iter().enumerate() {
            let row: Vec<f64> = logits.row(i).iter().map(|x| x.to_f64().unwrap()).collect();
            let lse = log_sum_exp(&row);
            loss += lse - row[target as usize];
            let out = logits.row_mut(i);
            for (j, o) in out.iter_mut().enumerate() {
                let p = (row[j] - lse).exp();
                let t = if j == target as usize { 1.0 } else { 0.0 };
                *o = T::lit((p - t) / n);
            }
        }
        mlm_head_backward(params, hidden, &rows, &logits, d_hidden, grads);
        Ok(loss / n)
    }
}

/// Soft cross-entropy `H(softmax(a_T / tau), softmax(a_S / tau))` between a
/// fixed teacher logit row and the student's MLM logits, summed over the
/// listed positions of each sequence and averaged over sequences.
#[derive(Debug, Clone)]
pub struct DistillLoss {
    /// Flat rows of the student batch that contribute.
    pub rows: Vec<usize>,
    /// Teacher logits, one row per entry of `rows`.
    pub teacher_logits: Tensor<f64>,
    pub temperature: f64,
    /// Number of sequences the sum is averaged over.
    pub sequences: usize,
}

impl<T: Real> Objective<T> for DistillLoss {
    fn evaluate(
        &self,
        params: &ModelParams<T>,
        _batch: &Batch,
        hidden: &HiddenStates<T>,
        d_hidden: &mut Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<f64, EncoderError> {
        if self.rows.len() != self.teacher_logits.rows {
            return Err(EncoderError::LengthMismatch {
                expected: self.rows.len(),
                actual: self.teacher_logits.rows,
            });
        }
        if self.teacher_logits.cols != params.config.vocab_size {
            return Err(EncoderError::LengthMismatch {
                expected: params.config.vocab_size,
                actual: self.teacher_logits.cols,
            });
        }
        if self.rows.is_empty() {
            return Ok(0.0);
        }
        let tau = self.temperature;
        let n = self.sequences.max(1) as f64;
        let mut logits = mlm_logits_rows(params, hidden, &self.rows);
        let mut loss = 0.0;
        for i in 0..self.rows.len() {
            let student: Vec<f64> = logits.row(i).iter().map(|x| x.to_f64().unwrap()).collect();
            let p = stable_softmax(self.teacher_logits.row(i), tau)?;
            let q = stable_softmax(&student, tau)?;
            loss += soft_cross_entropy(&p, &student, tau);
            let out = logits.row_mut(i);
            for j in 0..out.len() {
                out[j] = T::lit((q[j] - p[j]) / (tau * n));
            }
        }
        mlm_head_backward(params, hidden, &self.rows, &logits, d_hidden, grads);
        Ok(loss / n)
    }
}

/// `-sum p_i ln softmax(a / tau)_i` using a log-sum-exp so that tiny `q_i`
/// never hit `ln 0`.
pub(crate) fn soft_cross_entropy(p: &[f64], student_logits: &[f64], tau: f64) -> f64 {
    let scaled: Vec<f64> = student_logits.iter().map(|a| a / tau).collect();
    let lse = log_sum_exp(&scaled);
    p.iter()
        .zip(&scaled)
        .map(|(pi, si)| if *pi > 0.0 { -pi * (si - lse) } else { 0.0 })
        .sum()
}

/// Runs forward and reverse passes, adding this batch's gradients into
/// `grads`. Returns the loss.
pub fn accumulate_gradients<T: Real, O: Objective<T> + ?Sized>(
    params: &ModelParams<T>,
    objective: &O,
    batch: &Batch,
    mode: Mode,
    grads: &mut Gradients<T>,
) -> Result<f64, EncoderError> {
    let (hidden, trace) = forward_traced(params, batch, mode)?;
    let mut d_hidden = Tensor::zeros(hidden.rows, hidden.cols);
    let loss = objective.evaluate(params, batch, &hidden, &mut d_hidden, grads)?;
    if !loss.is_finite() {
        return Err(EncoderError::NonFiniteLoss(loss));
    }
    backward(params, batch, &trace, d_hidden, grads);
    Ok(loss)
}

/// Loss and exact reverse-mode gradients for every parameter.
pub fn compute_gradients<T: Real, O: Objective<T> + ?Sized>(
    params: &ModelParams<T>,
    objective: &O,
    batch: &Batch,
    mode: Mode,
) -> Result<(f64, Gradients<T>), EncoderError> {
    let mut grads = params.zeros_like();
    let loss = accumulate_gradients(params, objective, batch, mode, &mut grads)?;
    Ok((loss, grads))
}

/// Loss only, without a reverse pass.
pub fn evaluate_loss<T: Real, O: Objective<T> + ?Sized>(
    params: &ModelParams<T>,
    objective: &O,
    batch: &Batch,
) -> Result<f64, EncoderError> {
    let (hidden, _) = forward_traced(params, batch, Mode::Eval)?;
    let mut d_hidden = Tensor::zeros(hidden.rows, hidden.cols);
    let mut scratch = params.zeros_like();
    objective.evaluate(params, batch, &hidden, &mut d_hidden, &mut scratch)
}
