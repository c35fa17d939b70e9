//! Shared fixtures for the benchmarks: a synthetic domain, its vocabulary,
//! and desk-scale teacher- and student-shaped encoders.

use dstd_core::data_io::{generate_synthetic_domain, SyntheticDomain, SyntheticDomainSpec};
use dstd_core::dst::enumerate_candidates;
use dstd_core::encoder::{init_params, EncoderConfig, ModelParams};
use dstd_core::tokenizer::{build_vocab, Vocab};

pub const MAX_LEN: usize = 64;

pub struct Fixture {
    pub domain: SyntheticDomain,
    pub vocab: Vocab,
}

pub fn fixture() -> Fixture {
    let domain = generate_synthetic_domain(&SyntheticDomainSpec::restaurant(40, 0, 10, 5)).expect("valid spec");
    let mut text: Vec<String> = domain
        .train
        .iter()
        .flat_map(|d| d.turns.iter().flat_map(|t| [t.system_utterance.clone(), t.user_utterance.clone()]))
        .collect();
    text.extend(enumerate_candidates(&domain.ontology).iter().map(|c| c.text()));
    let vocab = build_vocab(&text, 300).expect("non-empty corpus");
    Fixture { domain, vocab }
}

/// Teacher shape scaled down: 4 layers, width 128.
pub fn teacher(vocab: &Vocab) -> ModelParams {
    init_params(&EncoderConfig::new(4, 128, 512, 4, vocab.len(), MAX_LEN), 1).expect("valid config")
}

/// Student shape scaled down: 2 layers, width 64.
pub fn student(vocab: &Vocab) -> ModelParams {
    init_params(&EncoderConfig::new(2, 64, 256, 4, vocab.len(), MAX_LEN), 1).expect("valid config")
}
