//! Transformer encoder shared by the teacher, the student and the state
//! tracker's candidate scorer.
//!
//! The block layout is post-norm: self-attention, residual, layer norm,
//! GELU feedforward, residual, layer norm. Token, segment and learned
//! position embeddings are summed at the input. Two heads sit on top of the
//! body: a masked-LM projection to the vocabulary and a single-logit relevance
//! scorer read from the first position.
//!
//! Gradients are computed by an explicit reverse pass ([`compute_gradients`]).
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

mod config;
mod loss;
mod model;
mod optim;
mod params;
mod tensor;

pub use config::{count_params, EncoderConfig, ParamCount};
#[allow(unused_imports)]
pub(crate) use loss::soft_cross_entropy;
pub use loss::{
    accumulate_gradients, compute_gradients, evaluate_loss, mlm_logits, mlm_logits_rows, scorer_logits, sigmoid, stable_softmax,
    ConstantLoss, DistillLoss, MaskedLmLoss, Objective, ScorerBce,
};
pub use model::{backward, forward, forward_batch, forward_traced, gelu, Batch, HiddenStates, LayerTrace, Mode, Trace};
pub use optim::{warmup_linear, AdamConfig, AdamState};
pub use params::{init_params, Gradients, LayerParams, ModelParams};
pub use tensor::{gemm, linear, Real, Tensor, View};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("input length {len} exceeds {max} positions")]
    InputTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("segment id {0} is not 0 or 1")]
    InvalidSegment(u8),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
