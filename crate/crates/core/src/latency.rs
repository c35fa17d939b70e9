//! Per-turn inference latency: every timed turn scores all ontology
//! candidates, selects, and updates the state.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dst::{Dialog, DialogState, DstError, EncoderScorer, Ontology, Tracker, DEFAULT_THRESHOLD};
use crate::encoder::ModelParams;
use crate::tokenizer::Vocab;

pub const MIN_MEASURED_TURNS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("{requested} measured turns requested, at least {MIN_MEASURED_TURNS} required")]
    TooFewTurns { requested: usize },
    #[error("no dialog turns to replay")]
    NoTurns,
    #[error(transparent)]
    Dst(#[from] DstError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Measured turns.
    pub turns: usize,
    /// Discarded turns before measurement.
    pub warmup: usize,
    pub threads: usize,
    pub max_len: usize,
    /// Candidates per forward pass.
    pub chunk: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            turns: 100,
            warmup: 5,
            threads: 1,
            max_len: 64,
            chunk: 32,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.turns < MIN_MEASURED_TURNS {
            return Err(BenchError::TooFewTurns { requested: self.turns });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_id: String,
    pub hardware: String,
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub p95_seconds: f64,
    pub turns: usize,
    pub warmup: usize,
    pub threads: usize,
    pub candidates_per_turn: usize,
    /// Tracker counters over warmup and measured turns together.
    pub turns_predicted: u64,
    pub candidates_scored: u64,
    pub state_updates: u64,
}

/// CPU model, core count, and target triple.
pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}; {cores} logical cores; {}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Replays dialog turns in order, cycling through `dialogs` as needed, and
/// times each full tracking step.
pub fn run_bench(
    params: &ModelParams,
    vocab: &Vocab,
    ontology: &Ontology,
    dialogs: &[Dialog],
    config: &BenchConfig,
    model_id: &str,
) -> Result<BenchReport, BenchError> {
    config.validate()?;
    if dialogs.iter().all(|d| d.turns.is_empty()) {
        return Err(BenchError::NoTurns);
    }
    let scorer = EncoderScorer::new(params, vocab, config.max_len)
        .with_chunk(config.chunk)
        .with_threads(config.threads);
    let tracker = Tracker::new(&scorer, ontology, DEFAULT_THRESHOLD);
    let total = config.warmup + config.turns;
    let mut samples = Vec::with_capacity(config.turns);
    let turns = dialogs.iter().cycle().flat_map(|d| d.turns.iter().enumerate());
    let mut state = DialogState::default();
    for (done, (index, turn)) in turns.take(total).enumerate() {
        if index == 0 {
            state = DialogState::default();
        }
        let start = Instant::now();
        let outcome = tracker.step(&state, turn)?;
        let elapsed = start.elapsed().as_secs_f64();
        state = outcome.state;
        if done >= config.warmup {
            samples.push(elapsed);
        }
    }
    samples.sort_by(f64::total_cmp);
    Ok(BenchReport {
        model_id: model_id.to_string(),
        hardware: hardware_description(),
        mean_seconds: samples.iter().sum::<f64>() / samples.len() as f64,
        median_seconds: median(&samples),
        p95_seconds: percentile(&samples, 0.95),
        turns: samples.len(),
        warmup: config.warmup,
        threads: config.threads.max(1),
        candidates_per_turn: tracker.candidates().len(),
        turns_predicted: tracker.turns_predicted(),
        candidates_scored: tracker.candidates_scored(),
        state_updates: tracker.state_updates(),
    })
}
