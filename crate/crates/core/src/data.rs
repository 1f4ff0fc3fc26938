//! Song datasets: JSONL IO, seeded splits and a planted synthetic corpus.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KrfError, Result};
use crate::kg::StyleGraph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SongSample {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub reviews: Vec<String>,
    pub labels: Vec<String>,
}

impl SongSample {
    fn validate(&self, styles: Option<&[String]>) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.reviews.is_empty() {
            return Err(format!("sample `{}` has no reviews", self.id));
        }
        if self.labels.is_empty() {
            return Err(format!("sample `{}` has no labels", self.id));
        }
        let mut seen = HashSet::new();
        for l in &self.labels {
            if !seen.insert(l) {
                return Err(format!("sample `{}` repeats label `{l}`", self.id));
            }
            if let Some(styles) = styles {
                if !styles.contains(l) {
                    return Err(format!("sample `{}` has unknown label `{l}`", self.id));
                }
            }
        }
        Ok(())
    }

    /// Label indices against an ordered style list.
    pub fn label_indices(&self, styles: &[String]) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| {
                styles.iter().position(|s| s == l).ok_or_else(|| {
                    KrfError::Data(format!("sample `{}` has unknown label `{l}`", self.id))
                })
            })
            .collect()
    }
}

/// Parses JSONL text, one sample per non-blank line. When `styles` is given
/// every label must belong to it.
pub fn parse_dataset(text: &str, source: &str, styles: Option<&[String]>) -> Result<Vec<SongSample>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| KrfError::Parse {
            path: source.to_string(),
            line: n + 1,
            msg: format!("record {}: {msg}", out.len() + 1),
        };
        let sample: SongSample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        sample.validate(styles).map_err(&err)?;
        if !ids.insert(sample.id.clone()) {
            return Err(err(format!("duplicate id `{}`", sample.id)));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, styles: Option<&[String]>) -> Result<Vec<SongSample>> {
    let text = fs::read_to_string(path).map_err(|e| KrfError::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), styles)
}

pub fn dataset_to_jsonl(samples: &[SongSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, samples: &[SongSample]) -> Result<()> {
    fs::write(path, dataset_to_jsonl(samples)).map_err(|e| KrfError::io(path, e))
}

/// Sorted union of all labels.
pub fn infer_styles(samples: &[SongSample]) -> Vec<String> {
    let set: BTreeSet<&String> = samples.iter().flat_map(|s| &s.labels).collect();
    set.into_iter().cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<SongSample>,
    pub validation: Vec<SongSample>,
    pub test: Vec<SongSample>,
    pub seed: u64,
}

/// (train, validation, test) sizes: validation and test are floored shares
/// of 21% and 9%, the remainder goes to train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n * 21 / 100;
    let test = n * 9 / 100;
    (n - val - test, val, test)
}

/// Seeded shuffle, then partition by [`split_sizes`].
pub fn split(samples: &[SongSample], seed: u64) -> Result<DatasetSplits> {
    if samples.len() < 10 {
        return Err(KrfError::Data(format!("need at least 10 samples to split, got {}", samples.len())));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !ids.insert(&s.id)) {
        return Err(KrfError::Data(format!("duplicate id `{}`", dup.id)));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_n, val_n, _) = split_sizes(samples.len());
    let pick = |range: &[usize]| range.iter().map(|&i| samples[i].clone()).collect();
    Ok(DatasetSplits {
        train: pick(&order[..train_n]),
        validation: pick(&order[train_n..train_n + val_n]),
        test: pick(&order[train_n + val_n..]),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Pair weight multiplier for styles linked in the graph.
    pub related_weight: f64,
    /// Relative propensity per style (graph order). `None` gives a gentle
    /// decline from the first style to the last.
    pub style_weights: Option<Vec<f64>>,
    /// Probability that a sample carries three labels instead of two.
    pub three_label_prob: f64,
    pub minority: Option<String>,
    /// Share of samples carrying the minority style, at most 0.02.
    pub minority_rate: f64,
    pub indicators_per_style: usize,
    /// Indicator occurrences per gold label, inclusive range.
    pub indicators_per_label: (usize, usize),
    /// Fraction of all tokens that are style indicators.
    pub signal_ratio: f64,
    pub noise_vocab: usize,
    pub reviews_per_sample: (usize, usize),
    /// Probability that a two-label sample gains a third style unrelated to
    /// both of its labels.
    pub rare_pair_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2000,
            seed: 7,
            related_weight: 5.0,
            style_weights: None,
            three_label_prob: 0.3,
            minority: None,
            minority_rate: 0.015,
            indicators_per_style: 8,
            indicators_per_label: (3, 8),
            signal_ratio: 0.3,
            noise_vocab: 300,
            reviews_per_sample: (2, 4),
            rare_pair_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub samples: Vec<SongSample>,
    pub styles: Vec<String>,
    /// Expected label-pair counts over the whole corpus under the planted
    /// distribution; the diagonal holds expected label counts.
    pub planted_pairs: Tensor,
    /// Planted probability that a sample carries each style.
    pub marginals: Vec<f64>,
    /// Minority style index and the graph neighbours it always co-occurs with.
    pub minority: Option<(usize, Vec<usize>)>,
}

pub fn indicator_token(style: &str, k: usize) -> String {
    let stem: String = style.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    format!("{stem}x{k}")
}

pub fn noise_token(k: usize) -> String {
    format!("w{k}")
}

fn subsets(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], size - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Generates a corpus whose label sets follow a planted distribution:
/// `P(S) ∝ Π_i π_i · Π_{i<j} w_ij` within each set size, with `w_ij` the
/// related weight for graph-linked pairs and 1 otherwise. The minority
/// style appears in exactly `floor(rate·n)` samples, always together with
/// every style it is linked to (one or two of them).
pub fn generate_synthetic(graph: &StyleGraph, cfg: &SynthConfig) -> Result<SynthCorpus> {
    let styles = graph.styles().to_vec();
    let c = styles.len();
    let bad = |m: String| Err(KrfError::Config(m));
    if c < 6 {
        return bad(format!("synthetic corpus needs at least 6 styles, graph has {c}"));
    }
    if graph.edges().is_empty() {
        return bad("synthetic corpus needs a graph with at least one edge".into());
    }
    if cfg.n_samples == 0 || !(cfg.related_weight > 0.0) || !(0.0..=1.0).contains(&cfg.three_label_prob) {
        return bad("n_samples, related_weight and three_label_prob are out of range".into());
    }
    if !(cfg.signal_ratio > 0.0 && cfg.signal_ratio <= 1.0) || !(0.0..=1.0).contains(&cfg.rare_pair_noise) {
        return bad("signal_ratio must lie in (0, 1] and rare_pair_noise in [0, 1]".into());
    }
    let (ilo, ihi) = cfg.indicators_per_label;
    let (rlo, rhi) = cfg.reviews_per_sample;
    if ilo == 0 || ilo > ihi || rlo == 0 || rlo > rhi || cfg.indicators_per_style == 0 || cfg.noise_vocab == 0 {
        return bad("indicator, vocabulary and review ranges must be non-empty and positive".into());
    }
    let weights = match &cfg.style_weights {
        Some(w) if w.len() != c || w.iter().any(|v| !(*v > 0.0)) => {
            return bad(format!("style_weights needs {c} positive entries"));
        }
        Some(w) => w.clone(),
        None => (0..c).map(|i| 1.0 / (1.0 + 0.2 * i as f64)).collect(),
    };
    let minority = match &cfg.minority {
        None => None,
        Some(name) => {
            let m = graph
                .style_index(name)
                .ok_or_else(|| KrfError::Config(format!("minority style `{name}` is not in the graph")))?;
            let partners = graph.neighbors(m);
            if partners.is_empty() || partners.len() > 2 {
                return bad(format!(
                    "minority style `{name}` needs one or two graph relations, has {}",
                    partners.len()
                ));
            }
            if !(0.0..=0.02).contains(&cfg.minority_rate) {
                return bad(format!("minority_rate {} exceeds 0.02", cfg.minority_rate));
            }
            Some((m, partners))
        }
    };

    let majority: Vec<usize> = (0..c).filter(|&i| minority.as_ref().is_none_or(|(m, _)| *m != i)).collect();
    let set_weight = |s: &[usize]| -> f64 {
        let mut w: f64 = s.iter().map(|&i| weights[i]).product();
        for (k, &i) in s.iter().enumerate() {
            for &j in &s[k + 1..] {
                if graph.relation(i, j).is_some() {
                    w *= cfg.related_weight;
                }
            }
        }
        w
    };
    let mut sets = Vec::new();
    let mut probs = Vec::new();
    for (size, p_size) in [(2, 1.0 - cfg.three_label_prob), (3, cfg.three_label_prob)] {
        let s = subsets(&majority, size);
        let ws: Vec<f64> = s.iter().map(|x| set_weight(x)).collect();
        let total: f64 = ws.iter().sum();
        for (x, w) in s.into_iter().zip(ws) {
            probs.push(p_size * w / total);
            sets.push(x);
        }
    }

    let n = cfg.n_samples;
    let n_min = minority.as_ref().map_or(0, |_| (cfg.minority_rate * n as f64).floor() as usize);
    let n_maj = (n - n_min) as f64;
    let mut planted = Tensor::zeros(&[c, c]);
    for (s, p) in sets.iter().zip(&probs) {
        for &i in s {
            for &j in s {
                planted.data_mut()[i * c + j] += n_maj * p;
            }
        }
    }
    if let Some((m, partners)) = &minority {
        let set: Vec<usize> = std::iter::once(*m).chain(partners.iter().copied()).collect();
        for &i in &set {
            for &j in &set {
                planted.data_mut()[i * c + j] += n_min as f64;
            }
        }
    }
    let marginals = (0..c).map(|i| planted.get2(i, i) / n as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let set_dist = WeightedIndex::new(&probs).map_err(|e| KrfError::Config(e.to_string()))?;
    let mut is_minority = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_min) {
        is_minority[i] = true;
    }
    let mut samples = Vec::with_capacity(n);
    for (i, &minor) in is_minority.iter().enumerate() {
        let mut labels = match &minority {
            Some((m, partners)) if minor => std::iter::once(*m).chain(partners.iter().copied()).collect(),
            _ => sets[set_dist.sample(&mut rng)].clone(),
        };
        if labels.len() == 2 && rng.gen_bool(cfg.rare_pair_noise) {
            let extra: Vec<usize> = majority
                .iter()
                .copied()
                .filter(|&x| !labels.contains(&x) && labels.iter().all(|&l| graph.relation(x, l).is_none()))
                .collect();
            if let Some(&x) = extra.choose(&mut rng) {
                labels.push(x);
            }
        }
        let reviews = synth_reviews(&labels, &styles, cfg, &mut rng);
        samples.push(SongSample {
            id: format!("syn-{i:05}"),
            title: format!("Synthetic song {i}"),
            reviews,
            labels: labels.iter().map(|&l| styles[l].clone()).collect(),
        });
    }
    Ok(SynthCorpus {
        samples,
        styles,
        planted_pairs: planted,
        marginals,
        minority,
    })
}

fn synth_reviews(labels: &[usize], styles: &[String], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut tokens = Vec::new();
    for &l in labels {
        let count = rng.gen_range(cfg.indicators_per_label.0..=cfg.indicators_per_label.1);
        for _ in 0..count {
            tokens.push(indicator_token(&styles[l], rng.gen_range(0..cfg.indicators_per_style)));
        }
    }
    let signal = tokens.len() as f64;
    let noise = (signal * (1.0 - cfg.signal_ratio) / cfg.signal_ratio).round() as usize;
    for _ in 0..noise {
        tokens.push(noise_token(rng.gen_range(0..cfg.noise_vocab)));
    }
    tokens.shuffle(rng);
    let k = rng.gen_range(cfg.reviews_per_sample.0..=cfg.reviews_per_sample.1).min(tokens.len());
    // k - 1 distinct cut points keep every review non-empty.
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, tokens.len() - 1, k - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    cuts.push(tokens.len());
    let mut start = 0;
    cuts.into_iter()
        .map(|end| {
            let review = tokens[start..end].join(" ");
            start = end;
            review
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eight_style_graph() -> StyleGraph {
        StyleGraph::parse_str(
            "styles:\nrock\npop\njazz\nfolk\npunk\nblues\nswing\nfolk_rock\nedges:\nrock pop coordinate\nrock punk super_subordinate\njazz swing super_subordinate\nfolk_rock folk fusion\njazz blues coordinate\n",
            "t",
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_follow_ratios() {
        assert_eq!(split_sizes(100), (70, 21, 9));
        assert_eq!(split_sizes(10), (8, 2, 0));
        assert_eq!(split_sizes(2000), (1400, 420, 180));
    }

    #[test]
    fn malformed_records_rejected() {
        let ok = r#"{"id":"a","title":"t","reviews":["x"],"labels":["rock"]}"#;
        assert_eq!(parse_dataset(ok, "t", None).unwrap().len(), 1);
        let missing = r#"{"id":"a","title":"t","reviews":["x"]}"#;
        assert!(parse_dataset(missing, "t", None).is_err());
        let dup = format!("{ok}\n{ok}\n");
        let err = parse_dataset(&dup, "t", None).unwrap_err().to_string();
        assert!(err.contains("duplicate id"), "{err}");
        let styles = vec!["pop".to_string()];
        assert!(parse_dataset(ok, "t", Some(&styles)).is_err());
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        let g = eight_style_graph();
        let cfg = SynthConfig { n_samples: 300, minority: Some("folk_rock".into()), ..Default::default() };
        let a = generate_synthetic(&g, &cfg).unwrap();
        let b = generate_synthetic(&g, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!(a.samples.iter().all(|s| (2..=3).contains(&s.labels.len())));
        assert_eq!(a.minority, Some((7, vec![3])));
        let minority = a.samples.iter().filter(|s| s.labels.contains(&"folk_rock".to_string())).count();
        assert_eq!(minority, 4);
        assert!(a.samples.iter().all(|s| (2..=4).contains(&s.reviews.len())));
    }

    #[test]
    fn synthetic_config_errors() {
        let g = eight_style_graph();
        let small = StyleGraph::parse_str("styles:\na\nb\nedges:\na b fusion\n", "t").unwrap();
        assert!(generate_synthetic(&small, &SynthConfig::default()).is_err());
        let cfg = SynthConfig { minority: Some("ska".into()), ..Default::default() };
        assert!(generate_synthetic(&g, &cfg).is_err());
        let cfg = SynthConfig { minority: Some("folk_rock".into()), minority_rate: 0.05, ..Default::default() };
        assert!(generate_synthetic(&g, &cfg).is_err());
    }
}
