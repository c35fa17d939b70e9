//! Dialog state tracking with a compact Transformer scorer, plus masked-LM
//! distillation of a small student encoder from a larger teacher.

pub mod data_io;
pub mod distill;
pub mod dst;
pub mod encoder;
pub mod latency;
pub mod tokenizer;

pub use data_io::{Checkpoint, DataError};
pub use distill::{DistillConfig, DistillError, LossPositions, MaskedExample};
pub use dst::{Candidate, Dialog, DialogState, DialogTurn, DstError, Ontology};
pub use encoder::{EncoderConfig, EncoderError, ModelParams};
pub use latency::{BenchConfig, BenchError, BenchReport};
pub use tokenizer::{PackedInput, TokenSequence, TokenizerError, Vocab};
