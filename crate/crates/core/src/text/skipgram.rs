//! Skip-gram with negative sampling for pretraining word vectors.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingTable, PAD, UNK};
use crate::error::{KrfError, Result};
use crate::tensor::kernels::sigmoid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to 1e-4 of itself.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutcome {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, one per epoch.
    pub epoch_losses: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains input vectors over encoded sentences. `<pad>` and `<unk>` are
/// skipped; negatives are drawn from the unigram distribution raised to 0.75.
pub fn train_skipgram(
    sentences: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipGramConfig,
) -> Result<SkipGramOutcome> {
    if cfg.window < 1 || cfg.negatives < 1 || cfg.dim < 1 || cfg.epochs < 1 {
        return Err(KrfError::Config(
            "skip-gram needs window, negatives, dim and epochs all >= 1".into(),
        ));
    }
    let sentences: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().copied().filter(|&t| t != PAD && t != UNK).collect())
        .collect();
    let mut counts = vec![0.0f64; vocab_size];
    for &t in sentences.iter().flatten() {
        if t >= vocab_size {
            return Err(KrfError::Data(format!("token index {t} outside vocabulary of {vocab_size}")));
        }
        counts[t] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    if total < (cfg.window + 1) as f64 {
        return Err(KrfError::Data(format!(
            "corpus has {total} trainable tokens, smaller than one window of {}",
            cfg.window + 1
        )));
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75)))
        .map_err(|e| KrfError::Data(format!("negative sampling table: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let half = 0.5 / d as f64;
    let mut input: Vec<f64> = (0..vocab_size * d).map(|_| rng.gen_range(-half..half)).collect();
    input[PAD * d..(PAD + 1) * d].iter_mut().for_each(|v| *v = 0.0);
    let mut output = vec![0.0f64; vocab_size * d];

    let steps_total = (total as usize * cfg.epochs).max(1) as f64;
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut neu = vec![0.0; d];
    for _ in 0..cfg.epochs {
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lr = cfg.learning_rate * (1.0 - step as f64 / steps_total).max(1e-4);
                step += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(sent.len());
                for (cpos, &context) in sent.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    neu.iter_mut().for_each(|v| *v = 0.0);
                    let v = center * d..(center + 1) * d;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * d..(target + 1) * d;
                        let p = sigmoid(dot(&input[v.clone()], &output[u.clone()]));
                        loss -= if label == 1.0 { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                        let g = lr * (label - p);
                        for j in 0..d {
                            neu[j] += g * output[u.start + j];
                            output[u.start + j] += g * input[v.start + j];
                        }
                    }
                    for j in 0..d {
                        input[v.start + j] += neu[j];
                    }
                    pairs += 1;
                }
            }
        }
        epoch_losses.push(loss / pairs.max(1) as f64);
    }
    let table = EmbeddingTable::new(Tensor::new(&[vocab_size, d], input)?)?;
    Ok(SkipGramOutcome { table, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;
    use rand::seq::SliceRandom;

    /// Sentences are drawn from topical word groups plus random filler;
    /// "jazz" and "swing" sit in the same group and so always co-occur.
    fn cooccurrence_corpus() -> (Vocabulary, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let groups = [
            ["jazz", "swing", "bebop", "trumpet"],
            ["metal", "riff", "doom", "growl"],
            ["folk", "banjo", "ballad", "fiddle"],
            ["techno", "synth", "rave", "beat"],
        ];
        let filler = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let mut texts = Vec::new();
        for i in 0..400 {
            let mut words: Vec<&str> = groups[i % groups.len()].to_vec();
            words.extend(filler.choose_multiple(&mut rng, 3).copied());
            words.shuffle(&mut rng);
            texts.push(words.join(" "));
        }
        let vocab = Vocabulary::build(texts.iter().map(String::as_str), 1).unwrap();
        let sents = texts.iter().map(|t| vocab.encode_text(t)).collect();
        (vocab, sents)
    }

    #[test]
    fn cooccurring_words_end_up_close() {
        let (vocab, sents) = cooccurrence_corpus();
        let cfg = SkipGramConfig { dim: 16, window: 2, negatives: 5, epochs: 10, learning_rate: 0.05, seed: 11 };
        let out = train_skipgram(&sents, vocab.len(), &cfg).unwrap();
        let target = out.table.cosine(vocab.encode("jazz"), vocab.encode("swing"));
        let ids: Vec<usize> = (2..vocab.len()).collect();
        let mut sum = 0.0;
        let mut n = 0.0;
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                sum += out.table.cosine(a, b);
                n += 1.0;
            }
        }
        assert!(target > sum / n, "cos(jazz, swing) = {target}, mean = {}", sum / n);
    }

    #[test]
    fn shape_and_determinism() {
        let (vocab, sents) = cooccurrence_corpus();
        let cfg = SkipGramConfig { dim: 128, epochs: 1, ..Default::default() };
        let a = train_skipgram(&sents, vocab.len(), &cfg).unwrap();
        assert_eq!(a.table.weights().shape(), &[vocab.len(), 128]);
        let b = train_skipgram(&sents, vocab.len(), &cfg).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn loss_is_non_increasing_per_epoch() {
        let (vocab, sents) = cooccurrence_corpus();
        let cfg = SkipGramConfig { dim: 16, window: 2, negatives: 3, epochs: 8, learning_rate: 0.025, seed: 5 };
        let out = train_skipgram(&sents, vocab.len(), &cfg).unwrap();
        for w in out.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{:?}", out.epoch_losses);
        }
    }

    #[test]
    fn tiny_corpus_and_bad_config_rejected() {
        let cfg = SkipGramConfig { window: 5, ..Default::default() };
        assert!(train_skipgram(&[vec![2, 3, 4]], 5, &cfg).is_err());
        let cfg = SkipGramConfig { negatives: 0, ..Default::default() };
        assert!(train_skipgram(&[vec![2; 50]], 5, &cfg).is_err());
    }
}
