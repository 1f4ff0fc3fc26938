use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use krf_core::model::Ablation;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "krf", version, about = "Review-driven multi-label music style classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted synthetic corpus and its expected pair counts.
    GenSynth(GenSynthArgs),
    /// Train one model and write its checkpoint, epoch log and matrices.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Predict label sets for every sample of a dataset.
    Predict(PredictArgs),
    /// Export the label similarity heatmap of a checkpoint.
    Heatmap(HeatmapArgs),
    /// Train one model per tau and tabulate test metrics.
    SweepTau(SweepArgs),
    /// Pretrain word vectors with skip-gram on the training reviews.
    PretrainEmbeddings(PretrainArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    /// Style graph file.
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Style to plant as a rare, knowledge-linked minority.
    #[arg(long)]
    pub minority: Option<String>,
    #[arg(long, default_value_t = 0.015)]
    pub minority_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rare_pair_noise: f64,
    #[arg(long, env = "KRF_OUT_DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub word_hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub review_hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub gcn_input: usize,
    #[arg(long, default_value_t = 512)]
    pub gcn_hidden: usize,
    #[arg(long, default_value_t = 128)]
    pub gcn_output: usize,
    #[arg(long, default_value_t = 50)]
    pub max_words: usize,
    #[arg(long, default_value_t = 40)]
    pub max_reviews: usize,
    #[arg(long, default_value = "full")]
    #[serde(serialize_with = "as_display")]
    pub ablation: Ablation,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    /// JSONL dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    /// Seeds the split, the initialization and the batch order.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Pretrained table; its vocabulary is read from the same path with a `.vocab` extension.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, env = "KRF_OUT_DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 4.0)]
    pub tau: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: TrainingArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Inclusive integer range `lo..hi` or a comma-separated list.
    #[arg(long, default_value = "0..8")]
    pub taus: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: TrainingArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checked against the checkpoint's styles when given.
    #[arg(long)]
    pub kg: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Split seed; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory for `eval.json`; nothing is written without it.
    #[arg(long, env = "KRF_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory for `predictions.jsonl`; stdout without it.
    #[arg(long, env = "KRF_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "KRF_OUT_DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Split seed; use the one the model will be trained with.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub lr: f64,
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    #[arg(long, env = "KRF_OUT_DIR")]
    pub out: PathBuf,
}

fn as_display<S: serde::Serializer>(v: &Ablation, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}
