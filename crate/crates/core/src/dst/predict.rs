use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{enumerate_candidates, update_state, Candidate, DialogState, DialogTurn, DstError, Ontology};
use crate::encoder::{forward_batch, scorer_logits, sigmoid, Batch, Mode, ModelParams};
use crate::tokenizer::{pack_pair, tokenize, PackedInput, TokenSequence, Vocab, SEP, SEP_ID};

/// Pairs scored at or above this probability are selected.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub candidate: Candidate,
    pub probability: f64,
}

/// Relevance probabilities for a turn's candidates.
pub trait Scorer: Sync {
    fn score(&self, turn: &DialogTurn, candidates: &[Candidate]) -> Result<Vec<f64>, DstError>;
}

/// `system [SEP] user`: the first segment of every scorer input.
pub fn context_tokens(turn: &DialogTurn, vocab: &Vocab) -> TokenSequence {
    let mut ctx = tokenize(&turn.system_utterance, vocab);
    ctx.push_special(SEP, SEP_ID);
    ctx.extend(&tokenize(&turn.user_utterance, vocab));
    ctx
}

pub fn pack_candidate(context: &TokenSequence, candidate: &Candidate, vocab: &Vocab, max_len: usize) -> Result<PackedInput, DstError> {
    Ok(pack_pair(context, &tokenize(&candidate.text(), vocab), max_len)?)
}

/// Scores candidates with an encoder's `[CLS]` relevance head.
pub struct EncoderScorer<'a> {
    params: &'a ModelParams,
    vocab: &'a Vocab,
    max_len: usize,
    chunk: usize,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> EncoderScorer<'a> {
    pub fn new(params: &'a ModelParams, vocab: &'a Vocab, max_len: usize) -> Self {
        Self {
            params,
            vocab,
            max_len,
            chunk: 32,
            pool: None,
        }
    }

    /// Candidates per forward pass.
    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    /// Scores chunks on `threads` worker threads. Chunking is the same as in
    /// sequential mode, so the probabilities are identical.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.pool = if threads > 1 {
            Some(rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool"))
        } else {
            None
        };
        self
    }

    fn score_chunk(&self, inputs: &[PackedInput]) -> Result<Vec<f64>, DstError> {
        let refs: Vec<&PackedInput> = inputs.iter().collect();
        let batch = Batch::trimmed(&refs);
        let hidden = forward_batch(self.params, &batch, Mode::Eval)?;
        Ok(scorer_logits(self.params, &batch, &hidden).into_iter().map(sigmoid).collect())
    }
}

impl Scorer for EncoderScorer<'_> {
    fn score(&self, turn: &DialogTurn, candidates: &[Candidate]) -> Result<Vec<f64>, DstError> {
        let context = context_tokens(turn, self.vocab);
        let inputs = candidates
            .iter()
            .map(|c| pack_candidate(&context, c, self.vocab, self.max_len))
            .collect::<Result<Vec<_>, _>>()?;
        let chunks: Vec<&[PackedInput]> = inputs.chunks(self.chunk).collect();
        let scored: Vec<Vec<f64>> = match &self.pool {
            Some(pool) => pool.install(|| chunks.par_iter().map(|c| self.score_chunk(c)).collect::<Result<_, _>>())?,
            None => chunks.iter().map(|c| self.score_chunk(c)).collect::<Result<_, _>>()?,
        };
        Ok(scored.into_iter().flatten().collect())
    }
}

/// `sigmoid(W h_1 + b)` for one candidate.
pub fn score_candidate(
    params: &ModelParams,
    turn: &DialogTurn,
    candidate: &Candidate,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Prediction, DstError> {
    let probability = EncoderScorer::new(params, vocab, max_len).score(turn, std::slice::from_ref(candidate))?[0];
    Ok(Prediction {
        candidate: candidate.clone(),
        probability,
    })
}

/// Applies the threshold and keeps at most one value per informable slot
/// (highest probability, ties to the smaller value). Requests pass
/// independently.
pub fn select_candidates(predictions: &[Prediction], threshold: f64) -> BTreeSet<Candidate> {
    let mut best: BTreeMap<&str, &Prediction> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for p in predictions.iter().filter(|p| p.probability >= threshold) {
        if p.candidate.is_request() {
            out.insert(p.candidate.clone());
            continue;
        }
        let slot = p.candidate.slot.as_str();
        match best.get(slot) {
            Some(cur)
                if cur.probability > p.probability || (cur.probability == p.probability && cur.candidate.value <= p.candidate.value) => {}
            _ => {
                best.insert(slot, p);
            }
        }
    }
    out.extend(best.into_values().map(|p| p.candidate.clone()));
    out
}

/// Scores every candidate and selects the turn prediction.
pub fn predict_turn<S: Scorer + ?Sized>(
    scorer: &S,
    turn: &DialogTurn,
    candidates: &[Candidate],
    threshold: f64,
) -> Result<(BTreeSet<Candidate>, Vec<Prediction>), DstError> {
    let probs = scorer.score(turn, candidates)?;
    let predictions: Vec<Prediction> = candidates
        .iter()
        .zip(probs)
        .map(|(c, p)| Prediction {
            candidate: c.clone(),
            probability: p,
        })
        .collect();
    Ok((select_candidates(&predictions, threshold), predictions))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub predictions: Vec<Prediction>,
    pub selected: BTreeSet<Candidate>,
    pub state: DialogState,
}

/// Runs the per-turn predict-then-update loop for one ontology and counts the
/// work it does.
pub struct Tracker<'a, S: ?Sized> {
    scorer: &'a S,
    candidates: Vec<Candidate>,
    threshold: f64,
    turns: AtomicU64,
    scored: AtomicU64,
    updates: AtomicU64,
}

impl<'a, S: Scorer + ?Sized> Tracker<'a, S> {
    pub fn new(scorer: &'a S, ontology: &Ontology, threshold: f64) -> Self {
        Self {
            scorer,
            candidates: enumerate_candidates(ontology),
            threshold,
            turns: AtomicU64::new(0),
            scored: AtomicU64::new(0),
            updates: AtomicU64::new(0),
        }
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    /// One full turn: score all candidates, select, update the state.
    pub fn step(&self, prev: &DialogState, turn: &DialogTurn) -> Result<TurnOutcome, DstError> {
        let (selected, predictions) = predict_turn(self.scorer, turn, &self.candidates, self.threshold)?;
        self.turns.fetch_add(1, Ordering::Relaxed);
        self.scored.fetch_add(predictions.len() as u64, Ordering::Relaxed);
        let state = update_state(prev, &selected)?;
        self.updates.fetch_add(1, Ordering::Relaxed);
        Ok(TurnOutcome {
            predictions,
            selected,
            state,
        })
    }

    /// State after every turn, starting from the empty state.
    pub fn track(&self, turns: &[DialogTurn]) -> Result<Vec<DialogState>, DstError> {
        let mut state = DialogState::default();
        let mut out = Vec::with_capacity(turns.len());
        for turn in turns {
            state = self.step(&state, turn)?.state;
            out.push(state.clone());
        }
        Ok(out)
    }

    pub fn turns_predicted(&self) -> u64 {
        self.turns.load(Ordering::Relaxed)
    }

    pub fn candidates_scored(&self) -> u64 {
        self.scored.load(Ordering::Relaxed)
    }

    pub fn state_updates(&self) -> u64 {
        self.updates.load(Ordering::Relaxed)
    }
}

pub fn track_dialog<S: Scorer + ?Sized>(
    scorer: &S,
    turns: &[DialogTurn],
    ontology: &Ontology,
    threshold: f64,
) -> Result<Vec<DialogState>, DstError> {
    Tracker::new(scorer, ontology, threshold).track(turns)
}
