use std::process::ExitCode;

use dstd_core::distill::DistillError;
use dstd_core::dst::DstError;
use dstd_core::encoder::EncoderError;
use dstd_core::latency::BenchError;
use dstd_core::tokenizer::TokenizerError;
use dstd_core::DataError;
use thiserror::Error;

/// Exit codes. Argument syntax errors are reported by clap with code 2.
pub mod code {
    pub const INTERNAL: u8 = 1;
    pub const IO: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const DATA: u8 = 4;
    pub const TOKENIZER: u8 = 5;
    pub const ENCODER: u8 = 6;
    pub const DST: u8 = 7;
    pub const DISTILL: u8 = 8;
    pub const BENCH: u8 = 9;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dst(#[from] DstError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => code::CONFIG,
            CliError::Data(DataError::Io { .. }) => code::IO,
            CliError::Data(DataError::Tokenizer(_)) | CliError::Tokenizer(_) => code::TOKENIZER,
            CliError::Data(DataError::Encoder(e)) | CliError::Encoder(e) => encoder_code(e),
            CliError::Data(_) => code::DATA,
            CliError::Dst(DstError::Encoder(e)) => encoder_code(e),
            CliError::Dst(DstError::Tokenizer(_)) => code::TOKENIZER,
            CliError::Dst(_) => code::DST,
            CliError::Distill(DistillError::InvalidConfig(_)) => code::CONFIG,
            CliError::Distill(DistillError::Encoder(e)) => encoder_code(e),
            CliError::Distill(_) => code::DISTILL,
            CliError::Bench(BenchError::Dst(DstError::Encoder(e))) => encoder_code(e),
            CliError::Bench(_) => code::BENCH,
            CliError::Internal(_) => code::INTERNAL,
        })
    }
}

fn encoder_code(e: &EncoderError) -> u8 {
    match e {
        EncoderError::InvalidConfig(_) => code::CONFIG,
        _ => code::ENCODER,
    }
}
