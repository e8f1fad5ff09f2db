//! Command-line surface. Every subcommand struct is `Serialize` so the
//! effective settings can be echoed back as `key=value` lines.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "bnasr",
    version,
    about = "Bengali ASR toolkit: data curation, CTC decoding and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a clip manifest by votes and duration, optionally pooling and re-splitting two manifests
    Curate(CurateArgs),
    /// Resample WAV audio to 16 kHz and trim leading/trailing silence
    Trim(TrimArgs),
    /// Build a character vocabulary from manifest transcripts
    Vocab(VocabArgs),
    /// Encode manifest transcripts as vocabulary ids
    Encode(EncodeArgs),
    /// Beam-search decode logit files, with optional n-gram LM fusion
    Decode(DecodeArgs),
    /// CTC loss of reference transcripts against logit files
    Score(ScoreArgs),
    /// Sentence log10 probabilities under an ARPA model
    LmScore(LmScoreArgs),
    /// Train the toy acoustic model on a synthetic corpus with the two-phase schedule
    TrainToy(TrainToyArgs),
    /// Levenshtein, WER and CER of hypotheses against references
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Curate(_) => "curate",
            Command::Trim(_) => "trim",
            Command::Vocab(_) => "vocab",
            Command::Encode(_) => "encode",
            Command::Decode(_) => "decode",
            Command::Score(_) => "score",
            Command::LmScore(_) => "lm-score",
            Command::TrainToy(_) => "train-toy",
            Command::Eval(_) => "eval",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Curate(a) => &a.common,
            Command::Trim(a) => &a.common,
            Command::Vocab(a) => &a.common,
            Command::Encode(a) => &a.common,
            Command::Decode(a) => &a.common,
            Command::Score(a) => &a.common,
            Command::LmScore(a) => &a.common,
            Command::TrainToy(a) => &a.common,
            Command::Eval(a) => &a.common,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// key=value file supplying defaults for any flag of this subcommand
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Output order never depends on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CurateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Clip manifest TSV
    #[arg(long)]
    pub manifest: PathBuf,
    /// Second manifest; both are filtered, pooled and re-split
    #[arg(long)]
    pub merge_with: Option<PathBuf>,
    /// TSV of `clip_id<TAB>duration_s` overriding manifest durations
    #[arg(long)]
    pub durations: Option<PathBuf>,
    /// Measure durations from `<audio-dir>/<path>` WAVs after resampling and trimming
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub trim_divisor: f32,
    /// Shortest kept clip in seconds, inclusive
    #[arg(long, default_value_t = 0.0)]
    pub min_sec: f64,
    /// Longest kept clip in seconds, inclusive
    #[arg(long)]
    pub max_sec: Option<f64>,
    /// Keep only clips with strictly more up-votes than down-votes
    #[arg(long)]
    pub net_positive: bool,
    /// Train share when re-splitting merged manifests
    #[arg(long, default_value_t = 0.85)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Filtered manifest (the train split when merging); stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dev split when merging
    #[arg(long)]
    pub dev_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrimArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// WAV file or a directory of WAV files
    #[arg(long)]
    pub input: PathBuf,
    /// Output WAV file, or directory when the input is a directory
    #[arg(long)]
    pub output: PathBuf,
    /// Silence threshold is peak / divisor
    #[arg(long, default_value_t = 30.0)]
    pub divisor: f32,
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Vocabulary file; stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// `clip_id<TAB>ids` output; stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Directory of `<clip_id>.ctcl` logit files
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Word n-gram model for shallow fusion
    #[arg(long)]
    pub arpa: Option<PathBuf>,
    /// LM weight
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Word insertion bonus
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 32)]
    pub beam_width: usize,
    /// Log10 probability for words outside an LM without `<unk>`
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub oov_floor: f64,
    /// Normalization rules file; the built-in table if absent
    #[arg(long)]
    pub norm_rules: Option<PathBuf>,
    /// Skip Unicode canonical composition before the rewrite rules
    #[arg(long)]
    pub no_canonical_composition: bool,
    /// Emit raw transcripts without normalization or danda
    #[arg(long)]
    pub raw: bool,
    /// Dump the top N entries of the final beam to stderr
    #[arg(long, default_value_t = 0)]
    pub nbest: usize,
    /// Transcript TSV; stdout if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Directory of `<clip_id>.ctcl` logit files
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// `clip_id<TAB>text` references
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LmScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub arpa: PathBuf,
    /// One sentence per line; stdin if absent
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub oov_floor: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Seeds split and batch shuffling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds the synthetic corpus
    #[arg(long, default_value_t = 3)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub utterances: usize,
    /// Vocabulary size including blank and word delimiter
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Magnitude of the one-hot frame features
    #[arg(long, default_value_t = 16.0)]
    pub feature_scale: f64,
    #[arg(long, default_value_t = 150)]
    pub phase1_epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub phase1_lr: f64,
    #[arg(long, default_value_t = 2.5e-6)]
    pub phase1_weight_decay: f64,
    #[arg(long, default_value_t = 7)]
    pub phase2_epochs: usize,
    #[arg(long, default_value_t = 5e-6)]
    pub phase2_lr: f64,
    #[arg(long, default_value_t = 2.5e-9)]
    pub phase2_weight_decay: f64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.85)]
    pub train_fraction: f64,
    /// Training log TSV; stdout if absent
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Where to write the final TACM checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// `clip_id<TAB>text` references
    #[arg(long)]
    pub refs: PathBuf,
    /// `clip_id<TAB>text` hypotheses
    #[arg(long)]
    pub hyps: PathBuf,
    /// Remove punctuation (including dandas) from both sides first
    #[arg(long)]
    pub strip_punct: bool,
    /// Per-utterance report TSV
    #[arg(long)]
    pub report: Option<PathBuf>,
}
