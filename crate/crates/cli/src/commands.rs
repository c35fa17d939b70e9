use std::io::Write;
use std::path::{Path, PathBuf};

use dstd_core::data_io::{
    checkpoint_len, dialogs_to_json, generate_synthetic_corpus, generate_synthetic_domain, load_checkpoint, load_corpus, load_dialogs,
    load_ontology, load_states, load_vocab, ontology_to_json, projected_checkpoint_bytes, save_checkpoint, save_corpus, save_vocab,
    states_to_json, write_atomic, SaveOptions, SyntheticDomainSpec, TrackedDialog,
};
use dstd_core::distill::{distill, pretrain_teacher, DistillConfig, PretrainConfig, TrainLog};
use dstd_core::dst::{enumerate_candidates, evaluate_dialogs, track_dialog, train_dst, EncoderScorer, TrainDstConfig};
use dstd_core::encoder::{count_params, init_params, AdamConfig, EncoderConfig};
use dstd_core::latency::{run_bench, BenchConfig};
use dstd_core::tokenizer::{build_vocab, pack_corpus, Vocab};
use dstd_core::{DataError, Dialog, Ontology};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Architecture file: an encoder shape whose vocabulary size normally comes
/// from the vocabulary it is paired with.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelShape {
    layers: usize,
    hidden: usize,
    feedforward: usize,
    heads: usize,
    max_positions: usize,
    #[serde(default)]
    dropout: f32,
    vocab_size: Option<usize>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        CliError::Data(DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

fn load_shape(path: &Path) -> Result<ModelShape> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn shape_config(shape: &ModelShape, vocab_size: Option<usize>) -> Result<EncoderConfig> {
    let v = match (shape.vocab_size, vocab_size) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!(
                "config vocab_size {a} does not match the vocabulary's {b} tokens"
            )));
        }
        (Some(v), _) | (None, Some(v)) => v,
        (None, None) => return Err(CliError::Config("config needs vocab_size".into())),
    };
    let config =
        EncoderConfig::new(shape.layers, shape.hidden, shape.feedforward, shape.heads, v, shape.max_positions).with_dropout(shape.dropout);
    config.validate()?;
    Ok(config)
}

fn check_max_len(max_len: usize, config: &EncoderConfig) -> Result<()> {
    if max_len < 8 || max_len > config.max_positions {
        return Err(CliError::Config(format!(
            "--max-len {max_len} must lie in [8, {}]",
            config.max_positions
        )));
    }
    Ok(())
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("--lr {lr} must be positive")))
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("--threshold {threshold} must lie in (0, 1)")))
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Internal(e.to_string())),
    }
}

/// `model.dstd` -> `model.dstd.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(out: &Path, manifest: &serde_json::Value) -> Result<()> {
    let text = to_json(manifest)?;
    write_text(&manifest_path(out), &text)?;
    emit(None, &text)
}

fn loss_summary(log: &TrainLog) -> serde_json::Value {
    let k = (log.losses.len() / 10).max(1);
    json!({
        "steps": log.losses.len(),
        "first_loss": log.losses.first(),
        "last_loss": log.losses.last(),
        "head_mean_loss": log.head_mean(k),
        "tail_mean_loss": log.tail_mean(k),
    })
}

fn load_domain(dialogs: &Path, ontology: &Path) -> Result<(Ontology, Vec<Dialog>)> {
    let ontology = load_ontology(ontology)?;
    let dialogs = load_dialogs(dialogs, &ontology)?;
    Ok((ontology, dialogs))
}

pub fn gen_domain(a: &GenDomainArgs) -> Result<()> {
    let domain = generate_synthetic_domain(&SyntheticDomainSpec::restaurant(a.train, a.dev, a.test, a.seed.seed))?;
    std::fs::create_dir_all(&a.out).map_err(|e| {
        CliError::Data(DataError::Io {
            path: a.out.display().to_string(),
            message: e.to_string(),
        })
    })?;
    write_text(&a.out.join("ontology.json"), &ontology_to_json(&domain.ontology))?;
    for (name, split) in [("train", &domain.train), ("dev", &domain.dev), ("test", &domain.test)] {
        write_text(&a.out.join(format!("{name}.json")), &dialogs_to_json(split))?;
    }
    Ok(())
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    Ok(save_corpus(&a.out, &generate_synthetic_corpus(a.seed.seed, a.count))?)
}

pub fn build_vocab_cmd(a: &BuildVocabArgs) -> Result<()> {
    if a.corpus.is_empty() && a.dialogs.is_empty() {
        return Err(CliError::Config("give at least one --corpus or --dialogs file".into()));
    }
    let mut text = Vec::new();
    for path in &a.corpus {
        text.extend(load_corpus(path)?);
    }
    if let Some(path) = &a.ontology {
        let ontology = load_ontology(path)?;
        for path in &a.dialogs {
            for dialog in load_dialogs(path, &ontology)? {
                for turn in dialog.turns {
                    text.push(turn.system_utterance);
                    text.push(turn.user_utterance);
                }
            }
        }
        text.extend(enumerate_candidates(&ontology).iter().map(|c| c.text()));
    }
    let vocab = build_vocab(&text, a.size)?;
    Ok(save_vocab(&a.out, &vocab)?)
}

fn fresh_model(config: &Path, vocab: &Path, seed: u64) -> Result<(dstd_core::ModelParams, Vocab)> {
    let shape = load_shape(config)?;
    let vocab = load_vocab(vocab)?;
    let config = shape_config(&shape, Some(vocab.len()))?;
    Ok((init_params(&config, seed)?, vocab))
}

pub fn init(a: &InitArgs) -> Result<()> {
    let (params, vocab) = fresh_model(&a.config, &a.vocab, a.seed.seed)?;
    Ok(save_checkpoint(&params, &vocab, &a.out)?)
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let shape = load_shape(&a.config)?;
    let vocab = load_vocab(&a.vocab)?;
    let config = shape_config(&shape, Some(vocab.len()))?;
    check_max_len(a.max_len, &config)?;
    check_lr(a.lr)?;
    let hyper = PretrainConfig {
        mask_rate: a.mask_rate,
        steps: a.steps,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed.seed,
        ..PretrainConfig::default()
    };
    hyper.validate()?;
    let corpus = pack_corpus(&load_corpus(&a.corpus)?, &vocab, a.max_len)?;
    let (params, log) = pretrain_teacher(&config, &corpus, &hyper)?;
    save_checkpoint(&params, &vocab, &a.out)?;
    write_manifest(
        &a.out,
        &json!({
            "command": "pretrain",
            "seed": a.seed.seed,
            "config": config,
            "mask_rate": a.mask_rate,
            "lr": a.lr,
            "batch_size": a.batch_size,
            "max_len": a.max_len,
            "sentences": corpus.len(),
            "training": loss_summary(&log),
        }),
    )
}

pub fn distill_cmd(a: &DistillArgs) -> Result<()> {
    check_lr(a.lr)?;
    let config = DistillConfig {
        temperature: a.tau,
        mask_rate: a.mask_rate,
        loss_positions: a.loss_positions,
        steps: a.steps,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed.seed,
        ..DistillConfig::default()
    };
    config.validate()?;
    let shape = load_shape(&a.student_config)?;
    let teacher = load_checkpoint(&a.teacher)?;
    if !teacher.has_mlm_head {
        return Err(CliError::Config(format!(
            "{} has no masked-LM head to distill from",
            a.teacher.display()
        )));
    }
    let student_config = shape_config(&shape, Some(teacher.vocab.len()))?;
    check_max_len(a.max_len, &student_config)?;
    check_max_len(a.max_len, &teacher.params.config)?;
    let corpus = pack_corpus(&load_corpus(&a.corpus)?, &teacher.vocab, a.max_len)?;
    let (student, log) = distill(&teacher.params, &student_config, &corpus, &config)?;
    save_checkpoint(&student, &teacher.vocab, &a.out)?;
    write_manifest(
        &a.out,
        &json!({
            "command": "distill",
            "seed": a.seed.seed,
            "tau": a.tau,
            "mask_rate": a.mask_rate,
            "loss_positions": a.loss_positions,
            "lr": a.lr,
            "batch_size": a.batch_size,
            "max_len": a.max_len,
            "teacher": teacher.params.config,
            "student": student_config,
            "sentences": corpus.len(),
            "training": loss_summary(&log),
        }),
    )
}

pub fn train(a: &TrainArgs) -> Result<()> {
    check_lr(a.lr)?;
    if a.batch_size == 0 {
        return Err(CliError::Config("--batch-size must be positive".into()));
    }
    if a.negative_ratio == Some(0) {
        return Err(CliError::Config("--negative-ratio must be positive".into()));
    }
    if !(a.beta2 > 0.0 && a.beta2 < 1.0) {
        return Err(CliError::Config("--beta2 must lie in (0, 1)".into()));
    }
    if !(a.token_lr_scale.is_finite() && a.token_lr_scale > 0.0) {
        return Err(CliError::Config("--token-lr-scale must be positive".into()));
    }
    let (params, vocab) = match (&a.checkpoint, &a.config, &a.vocab) {
        (Some(path), _, _) => {
            let c = load_checkpoint(path)?;
            (c.params, c.vocab)
        }
        (None, Some(config), Some(vocab)) => fresh_model(config, vocab, a.seed.seed)?,
        _ => return Err(CliError::Config("give --checkpoint, or --config with --vocab".into())),
    };
    check_max_len(a.max_len, &params.config)?;
    let (ontology, dialogs) = load_domain(&a.dialogs, &a.ontology)?;
    let config = TrainDstConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            beta2: a.beta2,
            ..AdamConfig::default()
        },
        negative_ratio: a.negative_ratio,
        token_embedding_lr_scale: a.token_lr_scale,
        max_len: a.max_len,
        seed: a.seed.seed,
        ..TrainDstConfig::default()
    };
    let (params, report) = train_dst(params, &dialogs, &ontology, &vocab, &config)?;
    save_checkpoint(&params, &vocab, &a.out)?;
    write_manifest(
        &a.out,
        &json!({
            "command": "train",
            "seed": a.seed.seed,
            "config": params.config,
            "epochs": a.epochs,
            "lr": a.lr,
            "batch_size": a.batch_size,
            "negative_ratio": a.negative_ratio,
            "beta2": a.beta2,
            "token_lr_scale": a.token_lr_scale,
            "max_len": a.max_len,
            "dialogs": dialogs.len(),
            "training": report,
        }),
    )
}

fn track_all(checkpoint: &Path, ontology: &Ontology, dialogs: &[Dialog], scoring: &ScoringArgs) -> Result<Vec<TrackedDialog>> {
    check_threshold(scoring.threshold)?;
    let model = load_checkpoint(checkpoint)?;
    check_max_len(scoring.max_len, &model.params.config)?;
    let scorer = EncoderScorer::new(&model.params, &model.vocab, scoring.max_len);
    dialogs
        .iter()
        .map(|d| {
            Ok(TrackedDialog {
                id: d.id.clone(),
                states: track_dialog(&scorer, &d.turns, ontology, scoring.threshold)?,
            })
        })
        .collect()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (ontology, gold) = load_domain(&a.dialogs, &a.ontology)?;
    let predicted = match (&a.predictions, &a.checkpoint) {
        (Some(path), _) => load_states(path, Some(&ontology))?,
        (None, Some(path)) => track_all(path, &ontology, &gold, &a.scoring)?,
        (None, None) => return Err(CliError::Config("give --predictions or --checkpoint".into())),
    };
    let mut items = Vec::with_capacity(gold.len());
    for g in &gold {
        let p = predicted
            .iter()
            .find(|p| p.id == g.id)
            .ok_or_else(|| CliError::Data(DataError::Parse(format!("no prediction for dialog {}", g.id))))?;
        items.push((g.id.as_str(), &p.states[..], &g.gold_states[..]));
    }
    let report = evaluate_dialogs(items)?;
    emit(a.out.as_deref(), &to_json(&report)?)
}

pub fn track(a: &TrackArgs) -> Result<()> {
    let (ontology, dialogs) = load_domain(&a.dialogs, &a.ontology)?;
    let tracked = track_all(&a.checkpoint, &ontology, &dialogs, &a.scoring)?;
    write_text(&a.out, &states_to_json(&tracked))
}

#[derive(Debug, Serialize)]
struct SizeReport {
    config: EncoderConfig,
    body_params: u64,
    mlm_head_params: u64,
    scorer_head_params: u64,
    total_params: u64,
    /// Checkpoint bytes without the masked-LM head or vocabulary.
    projected_bytes: u64,
    projected_bytes_with_mlm_head: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    file_bytes: Option<u64>,
}

pub fn size_report(a: &SizeReportArgs) -> Result<()> {
    let (config, file_bytes) = match (&a.config, &a.checkpoint) {
        (Some(path), _) => (shape_config(&load_shape(path)?, None)?, None),
        (None, Some(path)) => {
            let c = load_checkpoint(path)?;
            let opts = SaveOptions { mlm_head: c.has_mlm_head };
            (c.params.config, Some(checkpoint_len(&c.params.config, &c.vocab, opts)))
        }
        (None, None) => return Err(CliError::Config("give --config or --checkpoint".into())),
    };
    let count = count_params(&config);
    let report = SizeReport {
        config,
        body_params: count.body,
        mlm_head_params: count.mlm_head,
        scorer_head_params: count.scorer_head,
        total_params: count.total(),
        projected_bytes: projected_checkpoint_bytes(&config, SaveOptions { mlm_head: false }),
        projected_bytes_with_mlm_head: projected_checkpoint_bytes(&config, SaveOptions { mlm_head: true }),
        file_bytes,
    };
    emit(None, &to_json(&report)?)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let config = BenchConfig {
        turns: a.turns,
        warmup: a.warmup,
        threads: a.threads,
        max_len: a.max_len,
        ..BenchConfig::default()
    };
    config.validate()?;
    if a.threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let (ontology, dialogs) = load_domain(&a.dialogs, &a.ontology)?;
    let model = load_checkpoint(&a.checkpoint)?;
    check_max_len(a.max_len, &model.params.config)?;
    let model_id = a
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = run_bench(&model.params, &model.vocab, &ontology, &dialogs, &config, &model_id)?;
    emit(a.out.as_deref(), &to_json(&report)?)
}
