//! Mini-batch training with per-epoch validation and best-epoch selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corr::CorrelationMatrices;
use crate::data::{DatasetSplits, SongSample};
use crate::error::{KrfError, Result};
use crate::han::EncodedSong;
use crate::kg::{RelationScores, StyleGraph};
use crate::metrics::EvalReport;
use crate::model::{KrfModel, ModelConfig};
use crate::optim::Adam;
use crate::tensor::Tape;
use crate::text::{EmbeddingTable, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    /// Drives initialization and batch shuffling.
    pub seed: u64,
    pub threshold: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 20,
            batch_size: 64,
            tau: 4.0,
            seed: 7,
            threshold: 0.5,
            clip_norm: 5.0,
            min_count: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(KrfError::Config("learning_rate > 0, epochs >= 1 and batch_size >= 1 are required".into()));
        }
        if !(self.tau >= 0.0) || !(0.0..1.0).contains(&self.threshold) || !(self.clip_norm > 0.0) {
            return Err(KrfError::Config("tau >= 0, threshold in [0, 1) and clip_norm > 0 are required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    pub one_error: f64,
    pub hamming_loss: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,one_error,hamming_loss,macro_f1,micro_f1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.train_loss, self.one_error, self.hamming_loss, self.macro_f1, self.micro_f1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation micro F1.
    pub model: KrfModel,
    pub best_epoch: usize,
    pub best_validation: EvalReport,
    pub log: Vec<EpochRecord>,
    pub matrices: CorrelationMatrices,
}

/// Encoded songs with gold label indices.
pub struct PreparedSplit {
    pub songs: Vec<EncodedSong>,
    pub gold: Vec<Vec<usize>>,
}

impl PreparedSplit {
    pub fn new(model: &KrfModel, samples: &[SongSample]) -> Result<Self> {
        Ok(PreparedSplit {
            songs: samples.iter().map(|s| model.encode(s)).collect::<Result<_>>()?,
            gold: samples
                .iter()
                .map(|s| s.label_indices(&model.styles))
                .collect::<Result<_>>()?,
        })
    }
}

pub fn build_vocab(train: &[SongSample], min_count: usize) -> Result<Vocabulary> {
    Vocabulary::build(train.iter().flat_map(|s| s.reviews.iter().map(String::as_str)), min_count)
}

/// Trains one model. Vocabulary and correlation matrices come from the
/// training split only; a pretrained table brings its own vocabulary.
pub fn train(
    splits: &DatasetSplits,
    graph: &StyleGraph,
    scores: &RelationScores,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    pretrained: Option<(Vocabulary, EmbeddingTable)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(KrfError::Data("training and validation splits must be non-empty".into()));
    }
    let (vocab, embedding) = match pretrained {
        Some((v, t)) => {
            if t.vocab_size() != v.len() {
                return Err(KrfError::Data(format!(
                    "embedding table has {} rows for {} vocabulary tokens",
                    t.vocab_size(),
                    v.len()
                )));
            }
            (v, Some(t.into_tensor()))
        }
        None => (build_vocab(&splits.train, cfg.min_count)?, None),
    };
    let matrices = CorrelationMatrices::build(&splits.train, graph, scores, cfg.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = KrfModel::init(
        *model_cfg,
        graph.styles().to_vec(),
        vocab,
        &matrices.integrated,
        embedding,
        &mut rng,
    )?;
    let train_set = PreparedSplit::new(&model, &splits.train)?;
    let val_set = PreparedSplit::new(&model, &splits.validation)?;

    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.songs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, EvalReport, crate::tensor::ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedSong> = idx.iter().map(|&i| &train_set.songs[i]).collect();
            let gold: Vec<&[usize]> = idx.iter().map(|&i| train_set.gold[i].as_slice()).collect();
            let targets = model.gold_matrix(&gold)?;
            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape);
            let out = model.forward(&mut tape, &vars, &batch)?;
            let loss = tape.bce_with_logits(out, &targets)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(KrfError::NonFinite(format!("training loss {value} at epoch {epoch}, batch {}", b + 1)));
            }
            total += value * idx.len() as f64;
            let mut grads = tape.backward(loss)?;
            model.params.absorb_grads(&vars, &mut grads)?;
            let norm = model.params.clip_grad_norm(cfg.clip_norm);
            if !norm.is_finite() {
                return Err(KrfError::NonFinite(format!("gradient norm at epoch {epoch}, batch {}", b + 1)));
            }
            adam.step(&mut model.params)?;
        }
        let report = model.evaluate_encoded(&val_set.songs, &val_set.gold, cfg.threshold)?;
        log.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            one_error: report.one_error,
            hamming_loss: report.hamming_loss,
            macro_f1: report.macro_f1,
            micro_f1: report.micro_f1,
        });
        if best.as_ref().is_none_or(|(_, r, _)| report.micro_f1 > r.micro_f1) {
            best = Some((epoch, report, model.params.clone()));
        }
    }
    let (best_epoch, best_validation, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome { model, best_epoch, best_validation, log, matrices })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub best_epoch: usize,
    pub validation_micro_f1: f64,
    pub test: EvalReport,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "tau,best_epoch,validation_micro_f1,test_one_error,test_hamming_loss,test_macro_f1,test_micro_f1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.tau,
            self.best_epoch,
            self.validation_micro_f1,
            self.test.one_error,
            self.test.hamming_loss,
            self.test.macro_f1,
            self.test.micro_f1
        )
    }
}

/// One training run per τ with everything else, seed included, shared.
/// Rows come back in ascending τ order.
pub fn sweep_tau(
    splits: &DatasetSplits,
    graph: &StyleGraph,
    scores: &RelationScores,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus.into_iter()
        .map(|tau| {
            let run = train(splits, graph, scores, model_cfg, &TrainConfig { tau, ..*cfg }, None)?;
            Ok(SweepRow {
                tau,
                best_epoch: run.best_epoch,
                validation_micro_f1: run.best_validation.micro_f1,
                test: run.model.evaluate(&splits.test, cfg.threshold)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { tau: -1.0, ..Default::default() },
            TrainConfig { threshold: 1.0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn csv_rows_match_headers() {
        let r = EpochRecord { epoch: 3, train_loss: 1.5, one_error: 0.25, hamming_loss: 0.1, macro_f1: 0.5, micro_f1: 0.75 };
        assert_eq!(r.csv_row(), "3,1.5,0.25,0.1,0.5,0.75");
        assert_eq!(r.csv_row().split(',').count(), EpochRecord::CSV_HEADER.split(',').count());
        let s = SweepRow {
            tau: 2.0,
            best_epoch: 1,
            validation_micro_f1: 0.5,
            test: EvalReport { one_error: 0.0, hamming_loss: 0.0, macro_f1: 1.0, micro_f1: 1.0, per_label: vec![] },
        };
        assert_eq!(s.csv_row().split(',').count(), SweepRow::CSV_HEADER.split(',').count());
    }
}
