use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dstd_core::distill::LossPositions;

#[derive(Debug, Parser)]
#[command(name = "dstd", version, about = "Dialog state tracking with distilled Transformer encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic restaurant domain: ontology plus train/dev/test dialogs.
    GenDomain(GenDomainArgs),
    /// Write a synthetic pretraining corpus, one sentence per line.
    GenCorpus(GenCorpusArgs),
    /// Learn a WordPiece vocabulary.
    BuildVocab(BuildVocabArgs),
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
    /// Masked-LM pretraining of a teacher.
    Pretrain(PretrainArgs),
    /// Distill a student from a teacher checkpoint.
    Distill(DistillArgs),
    /// Fine-tune the relevance scorer on labelled dialogs.
    Train(TrainArgs),
    /// Score predicted states against gold dialogs.
    Evaluate(EvaluateArgs),
    /// Predict per-turn states for every dialog.
    Track(TrackArgs),
    /// Parameter counts and projected checkpoint size.
    SizeReport(SizeReportArgs),
    /// Per-turn inference latency.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    #[arg(long, env = "DSTD_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenDomainArgs {
    #[arg(long, default_value_t = 300)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub dev: usize,
    #[arg(long, default_value_t = 50)]
    pub test: usize,
    /// Output directory; receives ontology.json, train.json, dev.json, test.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Text files with one sentence per line.
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    /// Dialog files; their utterances and the ontology candidates are added.
    #[arg(long, requires = "ontology")]
    pub dialogs: Vec<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Model shape JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.15)]
    pub mask_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student_config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.15)]
    pub mask_rate: f64,
    #[arg(long, default_value = "all_tokens")]
    pub loss_positions: LossPositions,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Starting checkpoint; without it a model is initialized from --config and --vocab.
    #[arg(long, conflicts_with_all = ["config", "vocab"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub dialogs: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Negatives kept per positive in each turn; all negatives when absent.
    #[arg(long)]
    pub negative_ratio: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Adam second-moment decay.
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    /// Learning-rate multiplier for the token embedding.
    #[arg(long, default_value_t = 1.0)]
    pub token_lr_scale: f64,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold dialogs.
    #[arg(long)]
    pub dialogs: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    /// Predicted states as written by `track`.
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Track the gold dialogs with this model instead of reading predictions.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dialogs: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct SizeReportArgs {
    /// Model shape JSON; must include `vocab_size`.
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub dialogs: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub turns: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
