//! Masked-LM teacher pretraining and temperature-softened distillation of a
//! student encoder from the teacher's MLM logits.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    accumulate_gradients, evaluate_loss, forward_batch, init_params, mlm_logits_rows, stable_softmax, warmup_linear, AdamConfig, AdamState,
    Batch, DistillLoss, EncoderConfig, EncoderError, MaskedLmLoss, Mode, ModelParams, Real, Tensor,
};
use crate::tokenizer::{PackedInput, MASK_ID, SPECIAL_TOKENS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("sequence has no maskable position")]
    NothingToMask,
    #[error("logit vectors differ in length: teacher {teacher}, student {student}")]
    LengthMismatch { teacher: usize, student: usize },
    #[error("non-finite logit")]
    NonFinite,
    #[error("teacher vocabulary size {teacher} differs from student {student}")]
    VocabMismatch { teacher: usize, student: usize },
    #[error("invalid distillation config: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Whether `id` at a real position can be masked and scored.
pub fn is_maskable(id: u32) -> bool {
    id as usize >= SPECIAL_TOKENS.len()
}

/// A packed sentence with a subset of its real tokens replaced by `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub input: PackedInput,
    /// Ascending.
    pub masked_positions: Vec<usize>,
    /// Original id at each masked position.
    pub original_ids: Vec<u32>,
}

impl MaskedExample {
    /// The sentence before masking.
    pub fn unmasked(&self) -> PackedInput {
        let mut input = self.input.clone();
        for (&p, &id) in self.masked_positions.iter().zip(&self.original_ids) {
            input.ids[p] = id;
        }
        input
    }

    /// Real, non-special positions of the original sentence.
    pub fn content_positions(&self) -> Vec<usize> {
        let original = self.unmasked();
        (0..original.ids.len())
            .filter(|&p| original.attention_mask[p] == 1 && is_maskable(original.ids[p]))
            .collect()
    }

    pub fn positions(&self, which: LossPositions) -> Vec<usize> {
        match which {
            LossPositions::AllTokens => self.content_positions(),
            LossPositions::MaskedOnly => self.masked_positions.clone(),
        }
    }
}

/// Positions whose token losses are summed into a sentence loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPositions {
    /// Every real token except `[CLS]` and `[SEP]`, masked or not.
    #[default]
    AllTokens,
    MaskedOnly,
}

impl std::str::FromStr for LossPositions {
    type Err = DistillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_tokens" => Ok(Self::AllTokens),
            "masked_only" => Ok(Self::MaskedOnly),
            other => Err(DistillError::InvalidConfig(format!("unknown loss positions {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    pub mask_rate: f64,
    pub loss_positions: LossPositions,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 10.0,
            mask_rate: 0.15,
            loss_positions: LossPositions::AllTokens,
            steps: 1000,
            batch_size: 32,
            adam: AdamConfig::default(),
            warmup_fraction: 0.05,
            seed: 0,
        }
    }
}

fn check_rate(rate: f64) -> Result<(), DistillError> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(DistillError::InvalidConfig(format!("mask rate {rate} outside (0, 1)")))
    }
}

fn check_schedule(steps: usize, batch_size: usize, warmup_fraction: f64) -> Result<(), DistillError> {
    if batch_size == 0 && steps > 0 {
        return Err(DistillError::InvalidConfig("batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&warmup_fraction) {
        return Err(DistillError::InvalidConfig(format!(
            "warmup fraction {warmup_fraction} outside [0, 1]"
        )));
    }
    Ok(())
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DistillError::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        check_rate(self.mask_rate)?;
        check_schedule(self.steps, self.batch_size, self.warmup_fraction)
    }
}

/// Masked-LM training settings for the teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            steps: 1000,
            batch_size: 32,
            adam: AdamConfig::default(),
            warmup_fraction: 0.05,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        check_rate(self.mask_rate)?;
        check_schedule(self.steps, self.batch_size, self.warmup_fraction)
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean of the first `k` losses.
    pub fn head_mean(&self, k: usize) -> f64 {
        mean(&self.losses[..k.min(self.losses.len())])
    }

    /// Mean of the last `k` losses.
    pub fn tail_mean(&self, k: usize) -> f64 {
        mean(&self.losses[self.losses.len().saturating_sub(k)..])
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// splitmix64 finalizer; decorrelates per-example seeds.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Replaces `round(rate * maskable)` (at least one) uniformly chosen
/// non-special real positions with `[MASK]`.
pub fn mask_sentence(packed: &PackedInput, rate: f64, seed: u64) -> Result<MaskedExample, DistillError> {
    check_rate(rate)?;
    let maskable: Vec<usize> = (0..packed.ids.len())
        .filter(|&p| packed.attention_mask[p] == 1 && is_maskable(packed.ids[p]))
        .collect();
    if maskable.is_empty() {
        return Err(DistillError::NothingToMask);
    }
    let count = ((rate * maskable.len() as f64).round() as usize).clamp(1, maskable.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked_positions: Vec<usize> = index::sample(&mut rng, maskable.len(), count)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    masked_positions.sort_unstable();
    let mut input = packed.clone();
    let original_ids = masked_positions
        .iter()
        .map(|&p| std::mem::replace(&mut input.ids[p], MASK_ID))
        .collect();
    Ok(MaskedExample {
        input,
        masked_positions,
        original_ids,
    })
}

/// Masks every sentence with its own seed derived from `seed` and its index.
pub fn mask_corpus(corpus: &[PackedInput], rate: f64, seed: u64) -> Result<Vec<MaskedExample>, DistillError> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, p)| mask_sentence(p, rate, mix(seed, i as u64, 0)))
        .collect()
}

/// `H(softmax(a_T / tau), softmax(a_S / tau))` in nats.
pub fn token_distill_loss(teacher: &[f64], student: &[f64], temperature: f64) -> Result<f64, DistillError> {
    if teacher.len() != student.len() {
        return Err(DistillError::LengthMismatch {
            teacher: teacher.len(),
            student: student.len(),
        });
    }
    let p = stable_softmax(teacher, temperature).map_err(softmax_error)?;
    let scaled: Vec<f64> = student.iter().map(|a| a / temperature).collect();
    if scaled.iter().any(|x| !x.is_finite()) {
        return Err(DistillError::NonFinite);
    }
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(p.iter()
        .zip(&scaled)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, si)| -pi * (si - lse))
        .sum())
}

fn softmax_error(e: EncoderError) -> DistillError {
    match e {
        EncoderError::NonFiniteInput => DistillError::NonFinite,
        EncoderError::InvalidTemperature(t) => DistillError::InvalidConfig(format!("temperature {t} must be positive")),
        other => DistillError::Encoder(other),
    }
}

fn check_vocab<T, U>(teacher: &ModelParams<T>, student: &ModelParams<U>) -> Result<(), DistillError> {
    if teacher.config.vocab_size != student.config.vocab_size {
        return Err(DistillError::VocabMismatch {
            teacher: teacher.config.vocab_size,
            student: student.config.vocab_size,
        });
    }
    Ok(())
}

/// Runs the frozen teacher over the masked examples and packages its logits
/// at the selected positions as the student's objective. The objective's
/// loss is the per-sentence sum averaged over the examples.
pub fn distill_objective<T: Real>(
    teacher: &ModelParams<T>,
    examples: &[&MaskedExample],
    positions: LossPositions,
    temperature: f64,
) -> Result<(Batch, DistillLoss), DistillError> {
    let inputs: Vec<&PackedInput> = examples.iter().map(|e| &e.input).collect();
    let batch = Batch::trimmed(&inputs);
    let rows: Vec<usize> = examples
        .iter()
        .enumerate()
        .flat_map(|(b, e)| e.positions(positions).into_iter().map(move |p| (b, p)))
        .map(|(b, p)| batch.row(b, p))
        .collect();
    let hidden = forward_batch(teacher, &batch, Mode::Eval)?;
    let teacher_logits: Tensor<f64> = mlm_logits_rows(teacher, &hidden, &rows).cast();
    if !teacher_logits.is_finite() {
        return Err(DistillError::NonFinite);
    }
    Ok((
        batch,
        DistillLoss {
            rows,
            teacher_logits,
            temperature,
            sequences: examples.len(),
        },
    ))
}

/// Sum of token losses over the configured positions of one example.
pub fn sentence_distill_loss<T: Real>(
    teacher: &ModelParams<T>,
    student: &ModelParams<T>,
    example: &MaskedExample,
    config: &DistillConfig,
) -> Result<f64, DistillError> {
    check_vocab(teacher, student)?;
    let (batch, objective) = distill_objective(teacher, &[example], config.loss_positions, config.temperature)?;
    Ok(evaluate_loss(student, &objective, &batch)?)
}

/// Mean sentence loss over held-out examples.
pub fn heldout_distill_loss(
    teacher: &ModelParams,
    student: &ModelParams,
    examples: &[MaskedExample],
    config: &DistillConfig,
) -> Result<f64, DistillError> {
    check_vocab(teacher, student)?;
    if examples.is_empty() {
        return Err(DistillError::EmptyCorpus);
    }
    let mut total = 0.0;
    for chunk in examples.chunks(config.batch_size.max(1)) {
        let refs: Vec<&MaskedExample> = chunk.iter().collect();
        let (batch, objective) = distill_objective(teacher, &refs, config.loss_positions, config.temperature)?;
        total += evaluate_loss(student, &objective, &batch)? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Mean sentence entropy of the teacher's softened distributions: the lower
/// bound of [`heldout_distill_loss`] over all students, reached only when the
/// student's tempered softmax equals the teacher's.
pub fn distill_loss_floor(teacher: &ModelParams, examples: &[MaskedExample], config: &DistillConfig) -> Result<f64, DistillError> {
    if examples.is_empty() {
        return Err(DistillError::EmptyCorpus);
    }
    let mut total = 0.0;
    for chunk in examples.chunks(config.batch_size.max(1)) {
        let refs: Vec<&MaskedExample> = chunk.iter().collect();
        let (_, objective) = distill_objective(teacher, &refs, config.loss_positions, config.temperature)?;
        for r in 0..objective.teacher_logits.rows {
            let p = stable_softmax(objective.teacher_logits.row(r), config.temperature)?;
            total -= p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
        }
    }
    Ok(total / examples.len() as f64)
}

/// Fraction of masked positions whose arg-max MLM prediction is the original
/// token.
pub fn masked_accuracy(params: &ModelParams, examples: &[MaskedExample], batch_size: usize) -> Result<f64, DistillError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs: Vec<&PackedInput> = chunk.iter().map(|e| &e.input).collect();
        let batch = Batch::trimmed(&inputs);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (b, e) in chunk.iter().enumerate() {
            rows.extend(e.masked_positions.iter().map(|&p| batch.row(b, p)));
            targets.extend_from_slice(&e.original_ids);
        }
        let hidden = forward_batch(params, &batch, Mode::Eval)?;
        let logits = mlm_logits_rows(params, &hidden, &rows);
        for (i, &t) in targets.iter().enumerate() {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            hits += (best == t as usize) as usize;
        }
        total += targets.len();
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Cycles through `len` items in reshuffled epochs.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn masked_batch(corpus: &[PackedInput], picks: &[usize], rate: f64, seed: u64, step: usize) -> Result<Vec<MaskedExample>, DistillError> {
    picks
        .par_iter()
        .enumerate()
        .map(|(i, &s)| mask_sentence(&corpus[s], rate, mix(seed, step as u64 + 1, i as u64)))
        .collect()
}

/// Trains an encoder from `init_params(config, seed)` on masked-token
/// cross-entropy over freshly masked batches.
pub fn pretrain_teacher(
    config: &EncoderConfig,
    corpus: &[PackedInput],
    hyper: &PretrainConfig,
) -> Result<(ModelParams, TrainLog), DistillError> {
    hyper.validate()?;
    if corpus.is_empty() {
        return Err(DistillError::EmptyCorpus);
    }
    let mut params = init_params(config, hyper.seed)?;
    let mut adam = AdamState::for_model(&params);
    let mut grads = params.zeros_like();
    let mut sampler = Sampler::new(corpus.len(), hyper.seed);
    let warmup = (hyper.warmup_fraction * hyper.steps as f64).round() as usize;
    let mut log = TrainLog::default();
    for step in 0..hyper.steps {
        let picks = sampler.next_batch(hyper.batch_size);
        let examples = masked_batch(corpus, &picks, hyper.mask_rate, hyper.seed, step)?;
        let inputs: Vec<&PackedInput> = examples.iter().map(|e| &e.input).collect();
        let batch = Batch::trimmed(&inputs);
        let targets = examples
            .iter()
            .enumerate()
            .flat_map(|(b, e)| e.masked_positions.iter().zip(&e.original_ids).map(move |(&p, &id)| (b, p, id)))
            .map(|(b, p, id)| (batch.row(b, p), id))
            .collect();
        grads.fill(0.0);
        let mode = Mode::Train {
            seed: mix(hyper.seed, step as u64, 1),
        };
        let loss = accumulate_gradients(&params, &MaskedLmLoss { targets }, &batch, mode, &mut grads)?;
        adam.step_model(
            &mut params,
            &grads,
            &hyper.adam,
            warmup_linear(step, warmup, hyper.steps, hyper.adam.lr),
        )?;
        log.losses.push(loss);
    }
    Ok((params, log))
}

/// Trains a student from `init_params(student_config, seed)` to match the
/// frozen teacher's softened MLM distributions.
pub fn distill(
    teacher: &ModelParams,
    student_config: &EncoderConfig,
    corpus: &[PackedInput],
    config: &DistillConfig,
) -> Result<(ModelParams, TrainLog), DistillError> {
    config.validate()?;
    student_config.validate()?;
    if teacher.config.vocab_size != student_config.vocab_size {
        return Err(DistillError::VocabMismatch {
            teacher: teacher.config.vocab_size,
            student: student_config.vocab_size,
        });
    }
    if corpus.is_empty() {
        return Err(DistillError::EmptyCorpus);
    }
    let mut student = init_params(student_config, config.seed)?;
    let mut adam = AdamState::for_model(&student);
    let mut grads = student.zeros_like();
    let mut sampler = Sampler::new(corpus.len(), config.seed);
    let warmup = (config.warmup_fraction * config.steps as f64).round() as usize;
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let picks = sampler.next_batch(config.batch_size);
        let examples = masked_batch(corpus, &picks, config.mask_rate, config.seed, step)?;
        let refs: Vec<&MaskedExample> = examples.iter().collect();
        let (batch, objective) = distill_objective(teacher, &refs, config.loss_positions, config.temperature)?;
        grads.fill(0.0);
        let mode = Mode::Train {
            seed: mix(config.seed, step as u64, 2),
        };
        let loss = accumulate_gradients(&student, &objective, &batch, mode, &mut grads)?;
        adam.step_model(
            &mut student,
            &grads,
            &config.adam,
            warmup_linear(step, warmup, config.steps, config.adam.lr),
        )?;
        log.losses.push(loss);
    }
    Ok((student, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CLS_ID, PAD_ID, SEP_ID};

    fn sentence(n: usize, pad: usize) -> PackedInput {
        let mut ids = vec![CLS_ID];
        ids.extend((0..n).map(|i| 5 + i as u32));
        ids.push(SEP_ID);
        let real = ids.len();
        ids.extend(std::iter::repeat(PAD_ID).take(pad));
        PackedInput {
            segment_ids: vec![0; ids.len()],
            attention_mask: (0..ids.len()).map(|i| (i < real) as u8).collect(),
            ids,
        }
    }

    #[test]
    fn mask_counts() {
        let e = mask_sentence(&sentence(20, 4), 0.15, 1).unwrap();
        assert_eq!(e.masked_positions.len(), 3);
        assert!(e.masked_positions.iter().all(|&p| e.input.ids[p] == MASK_ID));
        assert!(e.masked_positions.iter().all(|&p| (1..=20).contains(&p)));
        assert_eq!(e.unmasked(), sentence(20, 4));
        assert_eq!(mask_sentence(&sentence(1, 0), 0.15, 1).unwrap().masked_positions, vec![1]);
    }

    #[test]
    fn mask_is_seeded() {
        let s = sentence(30, 0);
        assert_eq!(mask_sentence(&s, 0.15, 9).unwrap(), mask_sentence(&s, 0.15, 9).unwrap());
        let differs = (0..10).any(|k| mask_sentence(&s, 0.15, k).unwrap() != mask_sentence(&s, 0.15, 9).unwrap());
        assert!(differs);
    }

    #[test]
    fn mask_errors() {
        assert_eq!(mask_sentence(&sentence(0, 3), 0.15, 0), Err(DistillError::NothingToMask));
        assert!(matches!(
            mask_sentence(&sentence(5, 0), 0.0, 0),
            Err(DistillError::InvalidConfig(_))
        ));
        assert!(matches!(
            mask_sentence(&sentence(5, 0), 1.0, 0),
            Err(DistillError::InvalidConfig(_))
        ));
    }

    #[test]
    fn closed_form_losses() {
        assert!((token_distill_loss(&[0.0, 0.0], &[0.0, 0.0], 10.0).unwrap() - 2f64.ln()).abs() < 1e-6);
        assert!((token_distill_loss(&[10.0, 0.0], &[10.0, 0.0], 10.0).unwrap() - 0.5822).abs() < 1e-4);
        assert!((token_distill_loss(&[10.0, 0.0], &[0.0, 10.0], 10.0).unwrap() - 1.0444).abs() < 1e-4);
    }

    #[test]
    fn loss_errors() {
        assert_eq!(
            token_distill_loss(&[0.0], &[0.0, 1.0], 1.0),
            Err(DistillError::LengthMismatch { teacher: 1, student: 2 })
        );
        assert_eq!(token_distill_loss(&[f64::NAN, 0.0], &[0.0, 1.0], 1.0), Err(DistillError::NonFinite));
        assert_eq!(
            token_distill_loss(&[0.0, 0.0], &[f64::INFINITY, 1.0], 1.0),
            Err(DistillError::NonFinite)
        );
        assert!(token_distill_loss(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn loss_positions_parse() {
        assert_eq!("masked_only".parse::<LossPositions>().unwrap(), LossPositions::MaskedOnly);
        assert!("all".parse::<LossPositions>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        let bad = DistillConfig {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DistillConfig {
            mask_rate: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn tiny(vocab: usize) -> EncoderConfig {
        EncoderConfig::new(1, 8, 16, 2, vocab, 16)
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let t = init_params(&tiny(30), 0).unwrap();
        let s = init_params(&tiny(31), 0).unwrap();
        let e = mask_sentence(&sentence(4, 0), 0.15, 0).unwrap();
        assert!(matches!(
            sentence_distill_loss(&t, &s, &e, &DistillConfig::default()),
            Err(DistillError::VocabMismatch { .. })
        ));
        assert!(matches!(
            distill(&t, &tiny(31), &[sentence(4, 0)], &DistillConfig::default()),
            Err(DistillError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn masked_only_single_position_equals_token_loss() {
        let t = init_params(&tiny(30), 1).unwrap();
        let s = init_params(&tiny(30), 2).unwrap();
        let e = mask_sentence(&sentence(4, 2), 0.15, 3).unwrap();
        assert_eq!(e.masked_positions.len(), 1);
        let config = DistillConfig {
            loss_positions: LossPositions::MaskedOnly,
            temperature: 2.0,
            ..Default::default()
        };
        let batch = Batch::single(&e.input);
        let row = e.masked_positions[0];
        let ht = forward_batch(&t, &batch, Mode::Eval).unwrap();
        let hs = forward_batch(&s, &batch, Mode::Eval).unwrap();
        let lt: Vec<f64> = mlm_logits_rows(&t, &ht, &[row]).data.iter().map(|&x| x as f64).collect();
        let ls: Vec<f64> = mlm_logits_rows(&s, &hs, &[row]).data.iter().map(|&x| x as f64).collect();
        let expected = token_distill_loss(&lt, &ls, 2.0).unwrap();
        let got = sentence_distill_loss(&t, &s, &e, &config).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn padding_never_contributes() {
        let t = init_params(&tiny(30), 1).unwrap();
        let s = init_params(&tiny(30), 2).unwrap();
        let config = DistillConfig::default();
        let short = mask_sentence(&sentence(6, 0), 0.15, 3).unwrap();
        let long = mask_sentence(&sentence(6, 7), 0.15, 3).unwrap();
        assert_eq!(short.masked_positions, long.masked_positions);
        let a = sentence_distill_loss(&t, &s, &short, &config).unwrap();
        let b = sentence_distill_loss(&t, &s, &long, &config).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert_eq!(long.content_positions().len(), 6);
    }

    #[test]
    fn self_distillation_is_minimal() {
        let t = init_params(&tiny(30), 4).unwrap();
        let other = init_params(&tiny(30), 5).unwrap();
        let e = mask_sentence(&sentence(8, 0), 0.15, 3).unwrap();
        let config = DistillConfig {
            temperature: 1.0,
            ..Default::default()
        };
        let own = sentence_distill_loss(&t, &t, &e, &config).unwrap();
        assert!(own <= sentence_distill_loss(&t, &other, &e, &config).unwrap());
    }

    #[test]
    fn infinite_temperature_reaches_uniform() {
        let t = init_params(&tiny(30), 4).unwrap();
        let s = init_params(&tiny(30), 5).unwrap();
        let e = mask_sentence(&sentence(8, 0), 0.15, 3).unwrap();
        let config = DistillConfig {
            temperature: 1e6,
            ..Default::default()
        };
        let expected = 8.0 * 30f64.ln();
        let got = sentence_distill_loss(&t, &s, &e, &config).unwrap();
        assert!((got - expected).abs() / expected < 1e-3);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let corpus = vec![sentence(5, 0)];
        let hyper = PretrainConfig {
            steps: 0,
            seed: 3,
            ..Default::default()
        };
        let (p, log) = pretrain_teacher(&tiny(30), &corpus, &hyper).unwrap();
        assert_eq!(p, init_params(&tiny(30), 3).unwrap());
        assert!(log.losses.is_empty());
    }

    #[test]
    fn memorizes_a_repeated_sentence() {
        let corpus = vec![sentence(6, 0); 8];
        let config = EncoderConfig::new(1, 16, 32, 2, 16, 16);
        let hyper = PretrainConfig {
            steps: 300,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let (p, _) = pretrain_teacher(&config, &corpus, &hyper).unwrap();
        let held = mask_corpus(&corpus, 0.15, 77).unwrap();
        assert_eq!(masked_accuracy(&p, &held, 8).unwrap(), 1.0);
    }

    #[test]
    fn uniform_teacher_pulls_student_toward_ln_v() {
        let mut teacher = init_params(&tiny(20), 0).unwrap();
        teacher.mlm_w.fill(0.0);
        teacher.mlm_b.fill(0.0);
        let corpus: Vec<PackedInput> = (1..6).map(|n| sentence(n, 0)).collect();
        let config = DistillConfig {
            steps: 150,
            batch_size: 5,
            temperature: 1.0,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let before = teacher.clone();
        let (student, _) = distill(&teacher, &tiny(20), &corpus, &config).unwrap();
        assert_eq!(teacher, before);
        let held = mask_corpus(&corpus, 0.15, 1).unwrap();
        let per_token = heldout_distill_loss(&teacher, &student, &held, &config).unwrap() / 3.0;
        assert!((per_token - 20f64.ln()).abs() < 1e-2, "{per_token}");
    }
}
