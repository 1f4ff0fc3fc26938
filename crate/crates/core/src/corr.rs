//! Statistical and knowledge correlation matrices over style labels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::SongSample;
use crate::error::{KrfError, Result};
use crate::kg::{RelationScores, StyleGraph};
use crate::tensor::Tensor;

/// Counts label co-occurrence over label-index sets. Off-diagonal entries
/// count samples holding both labels; the diagonal counts samples holding
/// the label at all.
pub fn cooccurrence_from_sets(sets: &[Vec<usize>], num_labels: usize) -> Result<Tensor> {
    let mut a = Tensor::zeros(&[num_labels, num_labels]);
    for (n, set) in sets.iter().enumerate() {
        let mut labels = set.clone();
        labels.sort_unstable();
        labels.dedup();
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(KrfError::Data(format!("label set {n} holds index {bad} >= {num_labels}")));
        }
        for (k, &i) in labels.iter().enumerate() {
            a.data_mut()[i * num_labels + i] += 1.0;
            for &j in &labels[k + 1..] {
                a.data_mut()[i * num_labels + j] += 1.0;
                a.data_mut()[j * num_labels + i] += 1.0;
            }
        }
    }
    Ok(a)
}

/// Co-occurrence counts for training samples against an ordered style list.
pub fn cooccurrence_counts(train: &[SongSample], styles: &[String]) -> Result<Tensor> {
    let sets = train
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .map(|l| {
                    styles.iter().position(|x| x == l).ok_or_else(|| {
                        KrfError::Data(format!("sample `{}` has unknown label `{l}`", s.id))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    cooccurrence_from_sets(&sets, styles.len())
}

fn check_square(op: &'static str, a: &Tensor) -> Result<usize> {
    if a.rank() != 2 || a.rows() != a.cols() {
        return Err(KrfError::shape(op, a.shape(), &[]));
    }
    Ok(a.rows())
}

/// Zeroes off-diagonal entries below `tau`; the diagonal is left alone.
pub fn threshold_filter(a: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau >= 0.0) {
        return Err(KrfError::Config(format!("tau must be >= 0, got {tau}")));
    }
    let n = check_square("threshold_filter", a)?;
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j && a.get2(i, j) < tau {
                out.set2(i, j, 0.0);
            }
        }
    }
    Ok(out)
}

/// `D^{-1/2} A D^{-1/2}` with `D_ii = Σ_j A_ij`; zero-degree rows stay zero.
pub fn normalize(a: &Tensor) -> Result<Tensor> {
    let n = check_square("normalize", a)?;
    if let Some(bad) = a.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(KrfError::Domain {
            op: "normalize",
            detail: format!("entry {bad} is negative or non-finite"),
        });
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set2(i, j, inv_sqrt[i] * a.get2(i, j) * inv_sqrt[j]);
        }
    }
    Ok(out)
}

/// Sets every diagonal entry to 1.
pub fn with_unit_self_loops(a: &Tensor) -> Result<Tensor> {
    let n = check_square("with_unit_self_loops", a)?;
    let mut out = a.clone();
    for i in 0..n {
        out.set2(i, i, 1.0);
    }
    Ok(out)
}

/// Stacks `[statistical; knowledge]` into a `2 × C × C` tensor.
pub fn integrate(stat: &Tensor, knowledge: &Tensor) -> Result<Tensor> {
    let n = check_square("integrate", stat)?;
    if stat.shape() != knowledge.shape() {
        return Err(KrfError::shape("integrate", stat.shape(), knowledge.shape()));
    }
    let data = stat.data().iter().chain(knowledge.data()).copied().collect();
    Tensor::new(&[2, n, n], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrices {
    pub statistical_raw: Tensor,
    pub statistical_filtered: Tensor,
    /// Knowledge scores without self-loops.
    pub knowledge: Tensor,
    pub normalized_statistical: Tensor,
    pub normalized_knowledge: Tensor,
    pub integrated: Tensor,
}

impl CorrelationMatrices {
    /// Builds every matrix from the training split only.
    pub fn build(
        train: &[SongSample],
        graph: &StyleGraph,
        scores: &RelationScores,
        tau: f64,
    ) -> Result<Self> {
        let statistical_raw = cooccurrence_counts(train, graph.styles())?;
        Self::from_counts(statistical_raw, graph, scores, tau)
    }

    pub fn from_counts(
        statistical_raw: Tensor,
        graph: &StyleGraph,
        scores: &RelationScores,
        tau: f64,
    ) -> Result<Self> {
        let statistical_filtered = threshold_filter(&statistical_raw, tau)?;
        let knowledge = graph.knowledge_matrix(scores);
        let normalized_statistical = normalize(&statistical_filtered)?;
        let normalized_knowledge = normalize(&with_unit_self_loops(&knowledge)?)?;
        let integrated = integrate(&normalized_statistical, &normalized_knowledge)?;
        Ok(CorrelationMatrices {
            statistical_raw,
            statistical_filtered,
            knowledge,
            normalized_statistical,
            normalized_knowledge,
            integrated,
        })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header row of style names, then one row per style with its name first.
pub fn matrix_to_csv(styles: &[String], m: &Tensor) -> Result<String> {
    let n = check_square("matrix_to_csv", m)?;
    if styles.len() != n {
        return Err(KrfError::shape("matrix_to_csv", m.shape(), &[styles.len()]));
    }
    let mut out = String::from("style");
    for s in styles {
        out.push(',');
        out.push_str(&csv_field(s));
    }
    out.push('\n');
    for (i, s) in styles.iter().enumerate() {
        out.push_str(&csv_field(s));
        for j in 0..n {
            write!(out, ",{}", m.get2(i, j)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_matrix_csv(path: &Path, styles: &[String], m: &Tensor) -> Result<()> {
    fs::write(path, matrix_to_csv(styles, m)?).map_err(|e| KrfError::io(path, e))
}

/// Parses [`matrix_to_csv`] output back into style names and a matrix.
/// Lines starting with `#` are skipped. Style names must not need quoting.
pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, Tensor)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| KrfError::Data("empty matrix csv".into()))?;
    let styles: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let n = styles.len();
    let mut data = Vec::with_capacity(n * n);
    for (r, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or("");
        if styles.get(r).map(String::as_str) != Some(name) {
            return Err(KrfError::Data(format!("row {r} is labelled `{name}`")));
        }
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| KrfError::Data(format!("row {r}: bad number `{f}`: {e}")))?,
            );
        }
    }
    Ok((styles, Tensor::new(&[n, n], data)?))
}
