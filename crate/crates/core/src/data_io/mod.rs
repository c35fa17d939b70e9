//! File formats, checkpoints, and synthetic data.
//!
//! Ontology, dialog and state files are JSON. Corpus and vocabulary files are
//! UTF-8 with one entry per line. Checkpoints use a small versioned binary
//! layout described in [`checkpoint`].

pub mod checkpoint;
mod formats;
mod synthetic;

pub use checkpoint::{
    checkpoint_len, decode_checkpoint, encode_checkpoint, load_checkpoint, payload_checksum, projected_checkpoint_bytes, save_checkpoint,
    save_checkpoint_with, Checkpoint, SaveOptions, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use formats::{
    dialogs_to_json, load_corpus, load_dialogs, load_ontology, load_states, load_vocab, ontology_to_json, parse_dialogs, parse_ontology,
    parse_states, save_corpus, save_vocab, states_to_json, write_atomic, TrackedDialog,
};
pub use synthetic::{generate_synthetic_corpus, generate_synthetic_domain, SyntheticDomain, SyntheticDomainSpec};

use std::path::Path;

use thiserror::Error;

use crate::dst::DstError;
use crate::encoder::EncoderError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing field {0}")]
    MissingField(String),
    #[error("duplicate slot {0}")]
    DuplicateSlot(String),
    #[error("slot {0} has no values")]
    EmptyValueList(String),
    #[error("label {slot}={value} is not in the ontology")]
    LabelNotInOntology { slot: String, value: String },
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

impl DataError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

impl From<DstError> for DataError {
    fn from(e: DstError) -> Self {
        match e {
            DstError::DuplicateSlot(s) => DataError::DuplicateSlot(s),
            DstError::EmptyValueList(s) => DataError::EmptyValueList(s),
            DstError::LabelNotInOntology { slot, value } => DataError::LabelNotInOntology { slot, value },
            DstError::InvalidOntology(m) => DataError::InvalidOntology(m),
            DstError::Tokenizer(t) => DataError::Tokenizer(t),
            DstError::Encoder(e) => DataError::Encoder(e),
            other => DataError::Parse(other.to_string()),
        }
    }
}
