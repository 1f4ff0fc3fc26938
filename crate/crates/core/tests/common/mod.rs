//! Helpers shared by the integration tests: independent brute-force
//! oracles, random instance generators and small model fixtures.
#![allow(dead_code)]

use std::path::PathBuf;

use krf_core::data::{SongSample, SynthConfig};
use krf_core::gcn::GcnDims;
use krf_core::han::{EncodedSong, HanDims};
use krf_core::kg::{Relation, RelationScores, StyleGraph};
use krf_core::model::{KrfModel, ModelConfig};
use krf_core::tensor::Tensor;
use krf_core::text::Vocabulary;
use krf_core::corr::CorrelationMatrices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn eight_styles() -> StyleGraph {
    StyleGraph::load(&fixture("eight_styles.kg")).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    assert_eq!(a.len(), b.rows());
    a.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (i, j, *v)))
        .map(|(i, j, v)| (v - b.get2(i, j)).abs())
        .fold(0.0, f64::max)
}

/// Distinct labels per sample, `lo..=hi` of them, drawn from `0..c`.
pub fn random_sets(rng: &mut impl Rng, n: usize, c: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..c).collect();
    (0..n)
        .map(|_| {
            let k = rng.gen_range(lo..=hi.min(c));
            let mut s: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
            s.sort_unstable();
            s
        })
        .collect()
}

pub fn style_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("s{i}")).collect()
}

pub fn samples_from_sets(sets: &[Vec<usize>], styles: &[String]) -> Vec<SongSample> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| SongSample {
            id: format!("r{i}"),
            title: String::new(),
            reviews: vec!["tok".into()],
            labels: s.iter().map(|&l| styles[l].clone()).collect(),
        })
        .collect()
}

/// Random non-negative matrix, symmetric when asked, with some exact zeros
/// and small integers so threshold comparisons hit equality.
pub fn random_matrix(rng: &mut impl Rng, n: usize, symmetric: bool) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if symmetric && j < i {
                a[i][j] = a[j][i];
                continue;
            }
            a[i][j] = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => rng.gen_range(0..10) as f64,
                _ => rng.gen_range(0.0..12.0),
            };
        }
    }
    a
}

pub fn to_tensor(a: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(a).unwrap()
}

// ---- matrix oracles --------------------------------------------------------

pub fn brute_cooccurrence(sets: &[Vec<usize>], c: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; c]; c];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = sets.iter().filter(|s| s.contains(&i) && s.contains(&j)).count() as f64;
        }
    }
    out
}

pub fn brute_filter(a: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let mut out = a.to_vec();
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i != j && *cell < tau {
                *cell = 0.0;
            }
        }
    }
    out
}

/// `A_ij / sqrt(D_ii · D_jj)` entry by entry; degrees recomputed per entry.
pub fn brute_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let degree = |i: usize| -> f64 { (0..n).map(|k| a[i][k]).sum() };
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (degree(i), degree(j));
            out[i][j] = if di > 0.0 && dj > 0.0 { a[i][j] / (di * dj).sqrt() } else { 0.0 };
        }
    }
    out
}

pub fn brute_knowledge(c: usize, edges: &[(usize, usize, Relation)], scores: &RelationScores) -> Vec<Vec<f64>> {
    let value = |r: Relation| match r {
        Relation::Fusion => scores.fusion,
        Relation::SuperSubordinate => scores.super_subordinate,
        Relation::Coordinate => scores.coordinate,
    };
    let mut out = vec![vec![0.0; c]; c];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if let Some(&(_, _, r)) = edges.iter().find(|(a, b, _)| (*a == i && *b == j) || (*a == j && *b == i)) {
                *cell = value(r);
            }
        }
    }
    out
}

/// A random simple graph over `c` styles; returns it with its edge list.
pub fn random_graph(rng: &mut impl Rng, c: usize) -> (StyleGraph, Vec<(usize, usize, Relation)>) {
    let rels = [Relation::Fusion, Relation::SuperSubordinate, Relation::Coordinate];
    let mut edges = Vec::new();
    for i in 0..c {
        for j in i + 1..c {
            if rng.gen_bool(0.35) {
                let (a, b) = if rng.gen_bool(0.5) { (i, j) } else { (j, i) };
                edges.push((a, b, rels[rng.gen_range(0..3)]));
            }
        }
    }
    let names = style_names(c);
    let named = edges.iter().map(|&(a, b, r)| (names[a].clone(), names[b].clone(), r)).collect();
    (StyleGraph::new(names, named).unwrap(), edges)
}

// ---- metric oracles --------------------------------------------------------

pub fn brute_one_error(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> f64 {
    let mut misses = 0;
    for (s, g) in scores.iter().zip(gold) {
        let best = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let top = s.iter().position(|&v| v == best).unwrap();
        if !g.contains(&top) {
            misses += 1;
        }
    }
    misses as f64 / scores.len() as f64
}

pub fn brute_hamming(pred: &[Vec<usize>], gold: &[Vec<usize>], c: usize) -> f64 {
    let mut wrong = 0;
    for (p, g) in pred.iter().zip(gold) {
        for l in 0..c {
            if p.contains(&l) != g.contains(&l) {
                wrong += 1;
            }
        }
    }
    wrong as f64 / (pred.len() * c) as f64
}

fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// (macro, micro) recounted one (sample, label) pair at a time.
pub fn brute_f1(pred: &[Vec<usize>], gold: &[Vec<usize>], c: usize) -> (f64, f64) {
    let (mut ttp, mut tfp, mut tfn) = (0, 0, 0);
    let mut macro_sum = 0.0;
    for l in 0..c {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, g) in pred.iter().zip(gold) {
            match (p.contains(&l), g.contains(&l)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        macro_sum += f1_from(tp, fp, fn_);
        ttp += tp;
        tfp += fp;
        tfn += fn_;
    }
    (macro_sum / c as f64, f1_from(ttp, tfp, tfn))
}

// ---- model fixtures --------------------------------------------------------

pub const MICRO_STYLES: usize = 5;

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        han: HanDims { embed_dim: 8, word_hidden: 4, review_hidden: 4 },
        gcn: GcnDims { input: 8, hidden: 8, output: 4 },
        max_words: 6,
        max_reviews: 3,
        ..Default::default()
    }
}

pub fn micro_graph() -> StyleGraph {
    StyleGraph::parse_str(
        "styles:\nrock\npop\npunk\njazz\nswing\nedges:\npunk rock super_subordinate\nrock pop coordinate\nswing jazz super_subordinate\n",
        "micro",
    )
    .unwrap()
}

/// Four songs of at most three reviews with at most six tokens each.
pub fn micro_samples(seed: u64) -> Vec<SongSample> {
    let mut r = rng(seed);
    let words = ["loud", "riff", "swing", "brass", "chorus", "fast", "mellow", "crowd", "drums", "horn"];
    let styles = micro_graph().styles().to_vec();
    let sets = random_sets(&mut r, 4, MICRO_STYLES, 1, 3);
    sets.iter()
        .enumerate()
        .map(|(i, s)| SongSample {
            id: format!("m{i}"),
            title: String::new(),
            reviews: (0..r.gen_range(1..=3))
                .map(|_| {
                    (0..r.gen_range(1..=6))
                        .map(|_| *words.choose(&mut r).unwrap())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect(),
            labels: s.iter().map(|&l| styles[l].clone()).collect(),
        })
        .collect()
}

pub struct MicroSetup {
    pub model: KrfModel,
    pub songs: Vec<EncodedSong>,
    pub gold: Tensor,
}

pub fn micro_setup(config: ModelConfig, seed: u64) -> MicroSetup {
    let graph = micro_graph();
    let samples = micro_samples(seed);
    let vocab = Vocabulary::build(samples.iter().flat_map(|s| s.reviews.iter().map(String::as_str)), 1).unwrap();
    let m = CorrelationMatrices::build(&samples, &graph, &RelationScores::default(), 1.0).unwrap();
    let model =
        KrfModel::init(config, graph.styles().to_vec(), vocab, &m.integrated, None, &mut rng(seed + 100)).unwrap();
    let songs: Vec<EncodedSong> = samples.iter().map(|s| model.encode(s).unwrap()).collect();
    let gold_sets: Vec<Vec<usize>> = samples.iter().map(|s| s.label_indices(&model.styles).unwrap()).collect();
    let refs: Vec<&[usize]> = gold_sets.iter().map(Vec::as_slice).collect();
    let gold = model.gold_matrix(&refs).unwrap();
    MicroSetup { model, songs, gold }
}

// ---- planted corpora -------------------------------------------------------

/// The 2000-sample recovery corpus: eight styles, folk_rock as minority.
pub fn recovery_corpus_config() -> SynthConfig {
    SynthConfig {
        n_samples: 2000,
        seed: 7,
        minority: Some("folk_rock".into()),
        signal_ratio: 0.15,
        indicators_per_style: 16,
        ..Default::default()
    }
}

/// Desk-scale widths used by the recovery runs.
pub fn desk_config() -> ModelConfig {
    ModelConfig {
        han: HanDims { embed_dim: 32, word_hidden: 16, review_hidden: 16 },
        gcn: GcnDims { input: 32, hidden: 64, output: 32 },
        ..Default::default()
    }
}
