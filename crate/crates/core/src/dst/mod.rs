//! Dialog state tracking by candidate scoring.
//!
//! Every informable `(slot, value)` pair of the ontology, plus one
//! `request = <slot>` pair per requestable slot, is scored against the turn's
//! context. Pairs at or above the threshold form the turn prediction, which is
//! folded into the previous state: informable values are added or replaced,
//! requests are replaced wholesale every turn.

mod metrics;
mod predict;
mod train;

pub use metrics::{evaluate_dialogs, joint_goal_accuracy, turn_request_accuracy, DialogScore, MetricsReport};
pub use predict::{
    context_tokens, pack_candidate, predict_turn, score_candidate, select_candidates, track_dialog, EncoderScorer, Prediction, Scorer,
    Tracker, TurnOutcome, DEFAULT_THRESHOLD,
};
pub use train::{build_examples, train_dst, DstExample, TrainDstConfig, TrainDstReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::tokenizer::TokenizerError;

/// Pseudo-slot under which requestable slots are scored.
pub const REQUEST_SLOT: &str = "request";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DstError {
    #[error("label {slot}={value} is not in the ontology")]
    LabelNotInOntology { slot: String, value: String },
    #[error("conflicting values for slot {slot}")]
    ConflictingValues { slot: String },
    #[error("length mismatch: {predicted} predicted vs {gold} gold")]
    LengthMismatch { predicted: usize, gold: usize },
    #[error("duplicate slot {0}")]
    DuplicateSlot(String),
    #[error("slot {0} has no values")]
    EmptyValueList(String),
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Declared slots and values of a domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    informable: BTreeMap<String, Vec<String>>,
    requestable: Vec<String>,
}

impl Ontology {
    pub fn new<S: Into<String>>(informable: Vec<(S, Vec<S>)>, requestable: Vec<S>) -> Result<Self, DstError> {
        let mut map = BTreeMap::new();
        for (slot, values) in informable {
            let slot = slot.into();
            if slot == REQUEST_SLOT {
                return Err(DstError::InvalidOntology(format!("{REQUEST_SLOT:?} is reserved")));
            }
            let values: Vec<String> = values.into_iter().map(Into::into).collect();
            if values.is_empty() {
                return Err(DstError::EmptyValueList(slot));
            }
            let distinct: BTreeSet<&String> = values.iter().collect();
            if distinct.len() != values.len() {
                return Err(DstError::InvalidOntology(format!("slot {slot} lists a value twice")));
            }
            if values.iter().any(|v| v.trim().is_empty()) {
                return Err(DstError::InvalidOntology(format!("slot {slot} has an empty value")));
            }
            if map.insert(slot.clone(), values).is_some() {
                return Err(DstError::DuplicateSlot(slot));
            }
        }
        let requestable: Vec<String> = requestable.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for r in &requestable {
            if !seen.insert(r) {
                return Err(DstError::DuplicateSlot(r.clone()));
            }
        }
        Ok(Self {
            informable: map,
            requestable,
        })
    }

    pub fn informable(&self) -> &BTreeMap<String, Vec<String>> {
        &self.informable
    }

    pub fn requestable(&self) -> &[String] {
        &self.requestable
    }

    pub fn is_informable(&self, slot: &str) -> bool {
        self.informable.contains_key(slot)
    }

    pub fn contains(&self, candidate: &Candidate) -> bool {
        if candidate.slot == REQUEST_SLOT {
            self.requestable.contains(&candidate.value)
        } else {
            self.informable.get(&candidate.slot).is_some_and(|vs| vs.contains(&candidate.value))
        }
    }

    pub fn check(&self, candidate: &Candidate) -> Result<(), DstError> {
        if self.contains(candidate) {
            Ok(())
        } else {
            Err(DstError::LabelNotInOntology {
                slot: candidate.slot.clone(),
                value: candidate.value.clone(),
            })
        }
    }

    pub fn check_state(&self, state: &DialogState) -> Result<(), DstError> {
        for (slot, value) in &state.goals {
            self.check(&Candidate::inform(slot, value))?;
        }
        for r in &state.requests {
            self.check(&Candidate::request(r))?;
        }
        Ok(())
    }
}

/// One informable pair, or `request = <slot>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub slot: String,
    pub value: String,
}

impl Candidate {
    pub fn inform(slot: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            slot: slot.into(),
            value: value.into(),
        }
    }

    pub fn request(slot: impl Into<String>) -> Self {
        Self {
            slot: REQUEST_SLOT.to_string(),
            value: slot.into(),
        }
    }

    pub fn is_request(&self) -> bool {
        self.slot == REQUEST_SLOT
    }

    /// The token rendering fed to the scorer, e.g. `food = chinese` or
    /// `request = phone`.
    pub fn text(&self) -> String {
        format!("{} = {}", self.slot, self.value).to_lowercase()
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.slot, self.value)
    }
}

/// Every candidate of the ontology, sorted by slot name then value.
pub fn enumerate_candidates(ontology: &Ontology) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = ontology
        .informable
        .iter()
        .flat_map(|(slot, values)| values.iter().map(move |v| Candidate::inform(slot, v)))
        .chain(ontology.requestable.iter().map(Candidate::request))
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogTurn {
    /// System output of the previous turn; empty on the first turn.
    pub system_utterance: String,
    pub user_utterance: String,
    pub gold_turn_label: BTreeSet<Candidate>,
}

/// Informable goals (persisting) and the requests of the current turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogState {
    pub goals: BTreeMap<String, String>,
    pub requests: BTreeSet<String>,
}

/// A dialog with its gold state after every turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<DialogTurn>,
    pub gold_states: Vec<DialogState>,
}

/// Folds a turn prediction into the previous state. Mentioned informable
/// slots take the new value, unmentioned ones carry over, and the request set
/// is exactly the predicted requests.
pub fn update_state<'a, I>(prev: &DialogState, predicted: I) -> Result<DialogState, DstError>
where
    I: IntoIterator<Item = &'a Candidate>,
{
    let mut goals = prev.goals.clone();
    let mut requests = BTreeSet::new();
    let mut assigned: BTreeMap<&str, &str> = BTreeMap::new();
    for c in predicted {
        if c.is_request() {
            requests.insert(c.value.clone());
            continue;
        }
        if let Some(previous) = assigned.insert(&c.slot, &c.value) {
            if previous != c.value {
                return Err(DstError::ConflictingValues { slot: c.slot.clone() });
            }
        }
        goals.insert(c.slot.clone(), c.value.clone());
    }
    Ok(DialogState { goals, requests })
}
