use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict::{context_tokens, pack_candidate};
use super::{enumerate_candidates, Dialog, DstError, Ontology};
use crate::encoder::{accumulate_gradients, evaluate_loss, warmup_linear, AdamConfig, AdamState, Batch, Mode, ModelParams, ScorerBce};
use crate::tokenizer::{PackedInput, Vocab};

/// Fine-tuning settings for the relevance scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDstConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fraction of all steps spent warming the learning rate up.
    pub warmup_fraction: f64,
    /// Negatives kept per positive in each turn, resampled every epoch. Half
    /// are drawn from the slots of the turn's positives where possible.
    /// `None` trains on every negative.
    pub negative_ratio: Option<usize>,
    /// Learning-rate multiplier for the token embedding only. Each row
    /// moves only on batches containing its token, so a scorer trained from
    /// scratch needs a larger step there to learn value matching.
    pub token_embedding_lr_scale: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Size of the fixed example subset on which start and end loss are
    /// reported.
    pub loss_probe: usize,
}

impl Default for TrainDstConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            warmup_fraction: 0.1,
            negative_ratio: None,
            token_embedding_lr_scale: 1.0,
            max_len: 64,
            seed: 0,
            loss_probe: 512,
        }
    }
}

/// One `(turn, candidate)` pair with its 0/1 relevance label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DstExample {
    pub input: PackedInput,
    pub positive: bool,
    /// Candidate slot; `request` for requests.
    pub slot: String,
    /// Index of the source turn across the whole training set.
    pub turn: usize,
}

/// Packs every `(turn, candidate)` pair; labels come from the gold turn label.
pub fn build_examples(dialogs: &[Dialog], ontology: &Ontology, vocab: &Vocab, max_len: usize) -> Result<Vec<DstExample>, DstError> {
    let candidates = enumerate_candidates(ontology);
    let mut out = Vec::new();
    let mut turn_index = 0;
    for dialog in dialogs {
        for turn in &dialog.turns {
            for label in &turn.gold_turn_label {
                ontology.check(label)?;
            }
            let context = context_tokens(turn, vocab);
            for c in &candidates {
                out.push(DstExample {
                    input: pack_candidate(&context, c, vocab, max_len)?,
                    positive: turn.gold_turn_label.contains(c),
                    slot: c.slot.clone(),
                    turn: turn_index,
                });
            }
            turn_index += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDstReport {
    pub steps: usize,
    pub examples_per_epoch: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn epoch_indices(examples: &[DstExample], ratio: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked = match ratio {
        None => (0..examples.len()).collect::<Vec<_>>(),
        Some(r) => {
            let mut picked = Vec::new();
            let mut start = 0;
            while start < examples.len() {
                let turn = examples[start].turn;
                let end = start + examples[start..].iter().take_while(|e| e.turn == turn).count();
                let (pos, neg): (Vec<usize>, Vec<usize>) = (start..end).partition(|&i| examples[i].positive);
                let (mut hard, mut easy): (Vec<usize>, Vec<usize>) = neg
                    .into_iter()
                    .partition(|&i| pos.iter().any(|&p| examples[p].slot == examples[i].slot));
                hard.shuffle(rng);
                easy.shuffle(rng);
                let want = r * pos.len().max(1);
                let n_hard = hard
                    .len()
                    .min(want.div_ceil(2))
                    .max(want.saturating_sub(easy.len()).min(hard.len()));
                picked.extend(&pos);
                picked.extend(&hard[..n_hard]);
                picked.extend(easy.iter().take(want - n_hard));
                start = end;
            }
            picked
        }
    };
    picked.shuffle(rng);
    picked
}

fn probe_loss(params: &ModelParams, examples: &[DstExample], probe: &[usize], batch_size: usize) -> Result<f64, DstError> {
    let mut total = 0.0;
    for chunk in probe.chunks(batch_size.max(1)) {
        let inputs: Vec<&PackedInput> = chunk.iter().map(|&i| &examples[i].input).collect();
        let labels = chunk.iter().map(|&i| examples[i].positive as u8 as f64).collect();
        total += evaluate_loss(params, &ScorerBce { labels }, &Batch::trimmed(&inputs))? * chunk.len() as f64;
    }
    Ok(total / probe.len().max(1) as f64)
}

/// Minimizes binary cross-entropy of the relevance score against turn-label
/// membership.
pub fn train_dst(
    mut params: ModelParams,
    dialogs: &[Dialog],
    ontology: &Ontology,
    vocab: &Vocab,
    config: &TrainDstConfig,
) -> Result<(ModelParams, TrainDstReport), DstError> {
    let examples = build_examples(dialogs, ontology, vocab, config.max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut probe: Vec<usize> = (0..examples.len()).collect();
    probe.shuffle(&mut rng);
    probe.truncate(config.loss_probe);
    probe.sort_unstable();
    let initial_loss = probe_loss(&params, &examples, &probe, config.batch_size)?;

    let per_epoch = epoch_indices(&examples, config.negative_ratio, &mut rng.clone()).len();
    let batch_size = config.batch_size.max(1);
    let total_steps = config.epochs * per_epoch.div_ceil(batch_size);
    let warmup = (config.warmup_fraction * total_steps as f64).round() as usize;
    let mut adam = AdamState::for_model(&params);
    let lr_scales: Vec<f64> = params
        .tensor_names()
        .iter()
        .map(|n| {
            if n == "token_embedding" {
                config.token_embedding_lr_scale
            } else {
                1.0
            }
        })
        .collect();
    let mut grads = params.zeros_like();
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let order = epoch_indices(&examples, config.negative_ratio, &mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let inputs: Vec<&PackedInput> = chunk.iter().map(|&i| &examples[i].input).collect();
            let labels = chunk.iter().map(|&i| examples[i].positive as u8 as f64).collect();
            grads.fill(0.0);
            let mode = Mode::Train {
                seed: config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step as u64),
            };
            sum += accumulate_gradients(&params, &ScorerBce { labels }, &Batch::trimmed(&inputs), mode, &mut grads)? * chunk.len() as f64;
            let lr = warmup_linear(step, warmup, total_steps, config.adam.lr);
            adam.step_model_scaled(&mut params, &grads, &config.adam, lr, &lr_scales)?;
            step += 1;
        }
        epoch_losses.push(sum / order.len().max(1) as f64);
    }
    let final_loss = probe_loss(&params, &examples, &probe, config.batch_size)?;
    Ok((
        params,
        TrainDstReport {
            steps: step,
            examples_per_epoch: per_epoch,
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}
