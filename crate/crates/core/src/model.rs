//! The end-to-end classifier: song vectors from the HAN encoder are fused
//! with GCN label representations, `ŷ = ReLU(X)·W·(H²)ᵀ`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::data::SongSample;
use crate::error::{KrfError, Result};
use crate::gcn::{self, GcnDims, DEFAULT_LEAKY_SLOPE};
use crate::han::{self, EncodedSong, HanDims};
use crate::metrics::{self, top_label, EvalReport};
use crate::tensor::kernels::sigmoid;
use crate::tensor::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::text::Vocabulary;

const A_INT_RECORD: &str = "buffer.a_integrated";

/// Scale on the Glorot range of the fusion matrix. At gain 1 the product of
/// three small factors in the scorer starts near a saddle and some runs sit
/// on a plateau for most of a 20-epoch budget.
pub const FUSION_INIT_GAIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Statistical slice zeroed.
    NoStat,
    /// Knowledge slice zeroed.
    NoKnowledge,
    /// No GCN; label vectors are free parameters.
    HanOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoStat, Ablation::NoKnowledge, Ablation::HanOnly];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoStat => "no-stat",
            Ablation::NoKnowledge => "no-knowledge",
            Ablation::HanOnly => "han-only",
        }
    }

    /// The integrated tensor this variant propagates over.
    pub fn apply(self, a_int: &Tensor) -> Result<Tensor> {
        let s = a_int.shape();
        if s.len() != 3 || s[0] != 2 {
            return Err(KrfError::shape("ablation", s, &[2]));
        }
        let mut out = a_int.clone();
        let slice = s[1] * s[2];
        match self {
            Ablation::NoStat => out.data_mut()[..slice].iter_mut().for_each(|v| *v = 0.0),
            Ablation::NoKnowledge => out.data_mut()[slice..].iter_mut().for_each(|v| *v = 0.0),
            Ablation::Full | Ablation::HanOnly => {}
        }
        Ok(out)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = KrfError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| KrfError::Config(format!("unknown ablation `{s}` (full, no-stat, no-knowledge, han-only)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub han: HanDims,
    pub gcn: GcnDims,
    pub leaky_slope: f64,
    pub max_words: usize,
    pub max_reviews: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            han: HanDims { embed_dim: 128, word_hidden: 64, review_hidden: 64 },
            gcn: GcnDims { input: 128, hidden: 512, output: 128 },
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            max_words: 50,
            max_reviews: 40,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.han.embed_dim,
            self.han.word_hidden,
            self.han.review_hidden,
            self.gcn.input,
            self.gcn.hidden,
            self.gcn.output,
            self.max_words,
            self.max_reviews,
        ];
        if dims.contains(&0) {
            return Err(KrfError::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.leaky_slope.is_finite() {
            return Err(KrfError::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }

    fn to_pairs(self) -> Vec<(String, String)> {
        [
            ("embed_dim", self.han.embed_dim.to_string()),
            ("word_hidden", self.han.word_hidden.to_string()),
            ("review_hidden", self.han.review_hidden.to_string()),
            ("gcn_input", self.gcn.input.to_string()),
            ("gcn_hidden", self.gcn.hidden.to_string()),
            ("gcn_output", self.gcn.output.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("max_words", self.max_words.to_string()),
            ("max_reviews", self.max_reviews.to_string()),
            ("ablation", self.ablation.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_checkpoint(c: &Checkpoint) -> std::result::Result<Self, String> {
        fn get<T: FromStr>(c: &Checkpoint, key: &str) -> std::result::Result<T, String> {
            c.config_value(key)
                .ok_or_else(|| format!("missing config key `{key}`"))?
                .parse()
                .map_err(|_| format!("bad value for `{key}`"))
        }
        Ok(ModelConfig {
            han: HanDims {
                embed_dim: get(c, "embed_dim")?,
                word_hidden: get(c, "word_hidden")?,
                review_hidden: get(c, "review_hidden")?,
            },
            gcn: GcnDims {
                input: get(c, "gcn_input")?,
                hidden: get(c, "gcn_hidden")?,
                output: get(c, "gcn_output")?,
            },
            leaky_slope: get(c, "leaky_slope")?,
            max_words: get(c, "max_words")?,
            max_reviews: get(c, "max_reviews")?,
            ablation: get(c, "ablation")?,
        })
    }
}

/// Scores, probabilities and the decided label set for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Labels whose probability exceeds `threshold`, or the single top-scored
/// label when none does.
pub fn decide(scores: &[f64], threshold: f64) -> Vec<usize> {
    let labels: Vec<usize> = (0..scores.len()).filter(|&c| sigmoid(scores[c]) > threshold).collect();
    if labels.is_empty() && !scores.is_empty() {
        vec![top_label(scores)]
    } else {
        labels
    }
}

/// Label indices sorted by descending score, ties by lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrfModel {
    pub config: ModelConfig,
    pub styles: Vec<String>,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    /// Integrated correlation tensor with the ablation already applied.
    pub a_int: Tensor,
}

impl KrfModel {
    /// Fresh parameters. `a_int` is the unablated `[2, C, C]` tensor.
    pub fn init<R: Rng>(
        config: ModelConfig,
        styles: Vec<String>,
        vocab: Vocabulary,
        a_int: &Tensor,
        embedding: Option<Tensor>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = styles.len();
        if a_int.shape() != [2, c, c] {
            return Err(KrfError::shape("KrfModel::init", a_int.shape(), &[2, c, c]));
        }
        let mut params = ParamStore::new();
        han::init_params(&mut params, vocab.len(), &config.han, embedding, rng)?;
        let x_dim = config.han.output_dim();
        if config.ablation == Ablation::HanOnly {
            params.insert("labels.l", gcn::label_embeddings(c, config.gcn.output, rng))?;
        } else {
            gcn::init_params(&mut params, c, &config.gcn, rng)?;
        }
        let mut fw = gcn::glorot(x_dim, config.gcn.output, rng);
        fw.data_mut().iter_mut().for_each(|v| *v *= FUSION_INIT_GAIN);
        params.insert("fusion.w", fw)?;
        Ok(KrfModel {
            a_int: config.ablation.apply(a_int)?,
            config,
            styles,
            vocab,
            params,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.styles.len()
    }

    pub fn encode(&self, sample: &SongSample) -> Result<EncodedSong> {
        EncodedSong::from_sample(&self.vocab, sample, self.config.max_words, self.config.max_reviews)
    }

    /// `[C, D₂]` label representations on the tape.
    pub fn label_matrix(&self, tape: &mut Tape, vars: &ParamVars) -> Result<Var> {
        match self.config.ablation {
            Ablation::HanOnly => vars.get("labels.l"),
            _ => {
                let a = tape.constant(self.a_int.clone());
                gcn::style_representations(tape, a, vars, self.config.leaky_slope)
            }
        }
    }

    /// `[B, C]` scores.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, batch: &[&EncodedSong]) -> Result<Var> {
        let x = han::encode_batch(tape, vars, batch)?.songs;
        let labels = self.label_matrix(tape, vars)?;
        fuse(tape, x, vars.get("fusion.w")?, labels)
    }

    pub fn gold_matrix(&self, gold: &[&[usize]]) -> Result<Tensor> {
        let c = self.num_labels();
        let mut t = Tensor::zeros(&[gold.len(), c]);
        for (b, set) in gold.iter().enumerate() {
            for &l in *set {
                if l >= c {
                    return Err(KrfError::Data(format!("label {l} out of range for {c} styles")));
                }
                t.set2(b, l, 1.0);
            }
        }
        Ok(t)
    }

    /// Scores for many songs, in chunks, without building gradients.
    pub fn predict_scores(&self, songs: &[EncodedSong]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(songs.len());
        for chunk in songs.chunks(64) {
            let mut tape = Tape::new();
            let vars = self.params.register_frozen(&mut tape);
            let refs: Vec<&EncodedSong> = chunk.iter().collect();
            let scores = self.forward(&mut tape, &vars, &refs)?;
            let v = tape.value(scores);
            if !v.is_finite() {
                return Err(KrfError::NonFinite("prediction scores".into()));
            }
            out.extend((0..v.rows()).map(|r| v.row(r).to_vec()));
        }
        Ok(out)
    }

    pub fn predict(&self, samples: &[SongSample], threshold: f64) -> Result<Vec<Prediction>> {
        let songs = samples.iter().map(|s| self.encode(s)).collect::<Result<Vec<_>>>()?;
        Ok(self
            .predict_scores(&songs)?
            .into_iter()
            .map(|scores| Prediction {
                probabilities: scores.iter().map(|&s| sigmoid(s)).collect(),
                labels: decide(&scores, threshold),
                scores,
            })
            .collect())
    }

    /// Metrics over pre-encoded songs with gold label indices.
    pub fn evaluate_encoded(&self, songs: &[EncodedSong], gold: &[Vec<usize>], threshold: f64) -> Result<EvalReport> {
        let scores = self.predict_scores(songs)?;
        let pred: Vec<Vec<usize>> = scores.iter().map(|s| decide(s, threshold)).collect();
        metrics::evaluate(&self.styles, &scores, &pred, gold)
    }

    pub fn evaluate(&self, samples: &[SongSample], threshold: f64) -> Result<EvalReport> {
        let songs = samples.iter().map(|s| self.encode(s)).collect::<Result<Vec<_>>>()?;
        let gold = samples
            .iter()
            .map(|s| s.label_indices(&self.styles))
            .collect::<Result<Vec<_>>>()?;
        self.evaluate_encoded(&songs, &gold, threshold)
    }

    /// `H²` (or the free label matrix for han-only).
    pub fn style_representations(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.register_frozen(&mut tape);
        let l = self.label_matrix(&mut tape, &vars)?;
        Ok(tape.value(l).clone())
    }

    /// Writes the checkpoint; `extra` pairs are echoed into the config block.
    pub fn save(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        let mut config = self.config.to_pairs();
        config.push(("styles".into(), self.styles.join(" ")));
        config.push(("vocab".into(), self.vocab.tokens().join(" ")));
        config.extend(extra.iter().cloned());
        let mut records: Vec<(String, Tensor)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        records.push((A_INT_RECORD.to_string(), self.a_int.clone()));
        Checkpoint { config, records }.save(path)
    }

    /// Loads a checkpoint; returns the model and the full config block.
    pub fn load(path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let ckpt = Checkpoint::load(path)?;
        let bad = |m: String| KrfError::format(path, m);
        let config = ModelConfig::from_checkpoint(&ckpt).map_err(bad)?;
        let styles: Vec<String> = ckpt
            .config_value("styles")
            .ok_or_else(|| bad("missing styles".into()))?
            .split(' ')
            .map(str::to_string)
            .collect();
        let tokens = ckpt.config_value("vocab").ok_or_else(|| bad("missing vocab".into()))?;
        let vocab = Vocabulary::from_token_list(tokens.split(' ').map(str::to_string).collect())
            .map_err(|e| bad(e.to_string()))?;
        let mut params = ParamStore::new();
        let mut a_int = None;
        for (name, t) in ckpt.records.iter().cloned() {
            if name == A_INT_RECORD {
                a_int = Some(t);
            } else {
                params.insert(name, t)?;
            }
        }
        let a_int = a_int.ok_or_else(|| bad("missing correlation buffer".into()))?;
        let c = styles.len();
        if a_int.shape() != [2, c, c] {
            return Err(bad(format!("correlation buffer {:?} does not fit {c} styles", a_int.shape())));
        }
        let emb = params.get("embedding")?;
        if emb.shape() != [vocab.len(), config.han.embed_dim] {
            return Err(bad(format!("embedding {:?} does not fit the vocabulary", emb.shape())));
        }
        let model = KrfModel { config, styles, vocab, params, a_int };
        Ok((model, ckpt.config))
    }
}

/// `ReLU(X)·W·Lᵀ`.
pub fn fuse(tape: &mut Tape, x: Var, w: Var, labels: Var) -> Result<Var> {
    let x = tape.relu(x);
    let xw = tape.matmul(x, w)?;
    let lt = tape.transpose(labels)?;
    tape.matmul(xw, lt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_fixture() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, -3.0]]).unwrap());
        let w = tape.constant(Tensor::eye(2));
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap());
        let y = fuse(&mut tape, x, w, h).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn decision_rule() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let s = [logit(0.9), logit(0.4), logit(0.6)];
        assert_eq!(decide(&s, 0.5), vec![0, 2]);
        assert_eq!(decide(&[logit(0.2), logit(0.3), logit(0.1)], 0.5), vec![1]);
        let r = ranking(&s);
        let squashed: Vec<f64> = s.iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(ranking(&squashed), r);
        assert_eq!(r, vec![0, 2, 1]);
    }

    #[test]
    fn ablation_names_and_slices() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!("no_stat".parse::<Ablation>().unwrap(), Ablation::NoStat);
        assert!("none".parse::<Ablation>().is_err());
        let a = Tensor::new(&[2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        assert_eq!(Ablation::NoStat.apply(&a).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(Ablation::NoKnowledge.apply(&a).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
