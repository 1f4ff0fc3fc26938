use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use krf_core::corr::{matrix_to_csv, CorrelationMatrices};
use krf_core::data::{generate_synthetic, load_dataset, save_dataset, split, DatasetSplits, SongSample, SynthConfig};
use krf_core::gcn::{label_similarity_heatmap, GcnDims};
use krf_core::han::HanDims;
use krf_core::kg::{RelationScores, StyleGraph};
use krf_core::model::{KrfModel, ModelConfig};
use krf_core::text::{train_skipgram, EmbeddingTable, SkipGramConfig, Vocabulary};
use krf_core::train::{build_vocab, sweep_tau, train, EpochRecord, SweepRow, TrainConfig};
use krf_core::KrfError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::UsageError;

const RUN_CONFIG_KEY: &str = "run_config";

type Pretrained = (Vocabulary, EmbeddingTable);

/// The resolved flags of one invocation.
fn run_config(command: &str, args: &impl Serialize) -> Value {
    json!({ "command": command, "args": args })
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(KrfError::Data(format!("{what} `{}` does not exist", path.display())).into());
    }
    Ok(())
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(path: PathBuf, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_config(dir: &Path, config: &Value) -> Result<()> {
    write(dir.join("run_config.json"), format!("{}\n", serde_json::to_string_pretty(config)?))
}

/// CSV body preceded by a `#` line carrying the run config.
fn with_config(config: &Value, csv: &str) -> String {
    format!("# {config}\n{csv}")
}

fn load_graph(path: &Path) -> Result<StyleGraph> {
    require_file(path, "style graph")?;
    Ok(StyleGraph::load(path)?)
}

fn load_checkpoint(path: &Path) -> Result<(KrfModel, Vec<(String, String)>)> {
    require_file(path, "checkpoint")?;
    Ok(KrfModel::load(path)?)
}

fn stored<T: std::str::FromStr>(config: &[(String, String)], key: &str) -> Option<T> {
    config.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
}

pub fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let graph = load_graph(&a.kg)?;
    let cfg = SynthConfig {
        n_samples: a.n,
        seed: a.seed,
        minority: a.minority.clone(),
        minority_rate: a.minority_rate,
        rare_pair_noise: a.rare_pair_noise,
        ..Default::default()
    };
    let corpus = generate_synthetic(&graph, &cfg)?;
    let config = run_config("gen-synth", a);
    out_dir(&a.out)?;
    save_dataset(&a.out.join("dataset.jsonl"), &corpus.samples)?;
    write(a.out.join("planted_pairs.csv"), with_config(&config, &matrix_to_csv(&corpus.styles, &corpus.planted_pairs)?))?;
    write_config(&a.out, &config)?;
    println!("wrote {} samples over {} styles to {}", corpus.samples.len(), corpus.styles.len(), a.out.display());
    Ok(())
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            han: HanDims { embed_dim: self.embed_dim, word_hidden: self.word_hidden, review_hidden: self.review_hidden },
            gcn: GcnDims { input: self.gcn_input, hidden: self.gcn_hidden, output: self.gcn_output },
            max_words: self.max_words,
            max_reviews: self.max_reviews,
            ablation: self.ablation,
            ..Default::default()
        }
    }
}

impl TrainingArgs {
    fn train_config(&self, tau: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            tau,
            seed: self.seed,
            threshold: self.threshold,
            clip_norm: self.clip_norm,
            min_count: self.min_count,
        }
    }

    /// Validates every input path, then loads graph and splits.
    fn inputs(&self) -> Result<(StyleGraph, DatasetSplits, Option<Pretrained>)> {
        require_file(&self.dataset, "dataset")?;
        let graph = load_graph(&self.kg)?;
        let vocab_path = self.embeddings.as_ref().map(|p| p.with_extension("vocab"));
        if let (Some(table), Some(vocab)) = (&self.embeddings, &vocab_path) {
            require_file(table, "embedding table")?;
            require_file(vocab, "embedding vocabulary")?;
        }
        let samples = load_dataset(&self.dataset, Some(graph.styles()))?;
        let splits = split(&samples, self.seed)?;
        let pretrained = match (&self.embeddings, &vocab_path) {
            (Some(table), Some(vocab)) => Some((Vocabulary::load(vocab)?, EmbeddingTable::load(table)?)),
            _ => None,
        };
        Ok((graph, splits, pretrained))
    }
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let c = &a.common;
    let (graph, splits, pretrained) = c.inputs()?;
    let cfg = c.train_config(a.tau);
    let config = run_config("train", a);
    let out = train(&splits, &graph, &RelationScores::default(), &c.model.config(), &cfg, pretrained)?;

    out_dir(&c.out)?;
    let extra = vec![
        (RUN_CONFIG_KEY.to_string(), config.to_string()),
        ("split_seed".to_string(), c.seed.to_string()),
        ("threshold".to_string(), c.threshold.to_string()),
    ];
    out.model.save(&c.out.join("model.ckpt"), &extra)?;
    let mut log = format!("{}\n", EpochRecord::CSV_HEADER);
    for r in &out.log {
        log.push_str(&r.csv_row());
        log.push('\n');
    }
    write(c.out.join("epoch_log.csv"), with_config(&config, &log))?;
    write_matrices(&c.out, &config, graph.styles(), &out.matrices)?;
    write_config(&c.out, &config)?;
    println!(
        "best epoch {} of {}: validation micro F1 {:.4}; checkpoint {}",
        out.best_epoch,
        out.log.len(),
        out.best_validation.micro_f1,
        c.out.join("model.ckpt").display()
    );
    Ok(())
}

fn write_matrices(dir: &Path, config: &Value, styles: &[String], m: &CorrelationMatrices) -> Result<()> {
    for (name, t) in [
        ("statistical_raw", &m.statistical_raw),
        ("statistical_filtered", &m.statistical_filtered),
        ("knowledge", &m.knowledge),
        ("normalized_statistical", &m.normalized_statistical),
        ("normalized_knowledge", &m.normalized_knowledge),
    ] {
        write(dir.join(format!("{name}.csv")), with_config(config, &matrix_to_csv(styles, t)?))?;
    }
    Ok(())
}

fn pick_split(samples: Vec<SongSample>, which: SplitName, seed: u64) -> Result<Vec<SongSample>> {
    if which == SplitName::All {
        return Ok(samples);
    }
    let s = split(&samples, seed)?;
    Ok(match which {
        SplitName::Train => s.train,
        SplitName::Validation => s.validation,
        SplitName::Test | SplitName::All => s.test,
    })
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.dataset, "dataset")?;
    let (model, stored_config) = load_checkpoint(&a.checkpoint)?;
    if let Some(kg) = &a.kg {
        let graph = load_graph(kg)?;
        if graph.styles() != model.styles.as_slice() {
            return Err(KrfError::Data(format!(
                "checkpoint has {} styles but {} declares {}",
                model.styles.len(),
                kg.display(),
                graph.num_styles()
            ))
            .into());
        }
    }
    let seed = a.seed.or_else(|| stored(&stored_config, "split_seed")).unwrap_or(TrainConfig::default().seed);
    let threshold = a.threshold.or_else(|| stored(&stored_config, "threshold")).unwrap_or(0.5);
    let samples = load_dataset(&a.dataset, Some(&model.styles))?;
    let subset = pick_split(samples, a.split, seed)?;
    let report = model.evaluate(&subset, threshold)?;

    let config = run_config("eval", a);
    let doc = json!({ "config": config, "samples": subset.len(), "report": report });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    print!("{}", report.table());
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        write(dir.join("eval.json"), format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    require_file(&a.dataset, "dataset")?;
    let (model, stored_config) = load_checkpoint(&a.checkpoint)?;
    let threshold = a.threshold.or_else(|| stored(&stored_config, "threshold")).unwrap_or(0.5);
    let samples = load_dataset(&a.dataset, None)?;
    let predictions = model.predict(&samples, threshold)?;
    let config = run_config("predict", a);
    let mut body = String::new();
    for (s, p) in samples.iter().zip(&predictions) {
        let probabilities: serde_json::Map<String, Value> =
            model.styles.iter().zip(&p.probabilities).map(|(n, v)| (n.clone(), json!(v))).collect();
        let labels: Vec<&str> = p.labels.iter().map(|&l| model.styles[l].as_str()).collect();
        body.push_str(&json!({ "id": s.id, "labels": labels, "probabilities": probabilities }).to_string());
        body.push('\n');
    }
    match &a.out {
        Some(dir) => {
            out_dir(dir)?;
            write(dir.join("predictions.jsonl"), &body)?;
            write_config(dir, &config)?;
            println!("wrote {} predictions to {}", predictions.len(), dir.join("predictions.jsonl").display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

pub fn heatmap(a: &HeatmapArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let h2 = model.style_representations()?;
    let map = label_similarity_heatmap(&h2)?;
    let config = run_config("heatmap", a);
    out_dir(&a.out)?;
    write(a.out.join("heatmap.csv"), with_config(&config, &matrix_to_csv(&model.styles, &map)?))?;
    println!("wrote {0}x{0} heatmap to {1}", model.styles.len(), a.out.join("heatmap.csv").display());
    Ok(())
}

/// `lo..hi` (inclusive, integers) or `a,b,c`.
pub fn parse_taus(text: &str) -> std::result::Result<Vec<f64>, UsageError> {
    let bad = || UsageError(format!("--taus expects `lo..hi` or a comma-separated list, got `{text}`"));
    let taus: Vec<f64> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).map(f64::from).collect()
    } else {
        text.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?
    };
    if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(bad());
    }
    Ok(taus)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let taus = parse_taus(&a.taus)?;
    let c = &a.common;
    let (graph, splits, pretrained) = c.inputs()?;
    if pretrained.is_some() {
        return Err(UsageError("sweep-tau does not take --embeddings".into()).into());
    }
    let config = run_config("sweep-tau", a);
    let rows = sweep_tau(&splits, &graph, &RelationScores::default(), &c.model.config(), &c.train_config(4.0), &taus)?;
    let mut csv = format!("{}\n", SweepRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        println!("tau {:>4}: test micro F1 {:.4}", r.tau, r.test.micro_f1);
    }
    out_dir(&c.out)?;
    write(c.out.join("sweep.csv"), with_config(&config, &csv))?;
    write_config(&c.out, &config)?;
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    require_file(&a.dataset, "dataset")?;
    let samples = load_dataset(&a.dataset, None)?;
    let splits = split(&samples, a.seed)?;
    let vocab = build_vocab(&splits.train, a.min_count)?;
    let sentences: Vec<Vec<usize>> =
        splits.train.iter().flat_map(|s| s.reviews.iter().map(|r| vocab.encode_text(r))).collect();
    let cfg = SkipGramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let outcome = train_skipgram(&sentences, vocab.len(), &cfg)?;
    let config = run_config("pretrain-embeddings", a);
    out_dir(&a.out)?;
    let table = a.out.join("embeddings.bin");
    outcome.table.save(&table)?;
    vocab.save(&table.with_extension("vocab"))?;
    write_config(&a.out, &config)?;
    println!(
        "{} vectors of dimension {}; final epoch loss {:.4}; {}",
        vocab.len(),
        a.dim,
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        table.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_specs() {
        assert_eq!(parse_taus("0..8").unwrap().len(), 9);
        assert_eq!(parse_taus("2, 0.5").unwrap(), vec![2.0, 0.5]);
        for bad in ["", "3..1", "a..2", "1,-1", "x"] {
            assert!(parse_taus(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn stored_values_parse() {
        let cfg = vec![("split_seed".to_string(), "11".to_string())];
        assert_eq!(stored::<u64>(&cfg, "split_seed"), Some(11));
        assert_eq!(stored::<f64>(&cfg, "threshold"), None);
    }
}
