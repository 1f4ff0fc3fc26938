//! Multi-label evaluation: one-error, hamming loss, macro and micro F1.

use serde::{Deserialize, Serialize};

use crate::error::{KrfError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose gold set holds this label.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub one_error: f64,
    pub hamming_loss: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_label: Vec<LabelReport>,
}

impl EvalReport {
    /// Aligned table in the order OE, HL, Macro F1, Micro F1.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>10}\n{:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            "OE", "HL", "Macro F1", "Micro F1", self.one_error, self.hamming_loss, self.macro_f1, self.micro_f1
        )
    }

    pub fn label_f1(&self, label: &str) -> Option<f64> {
        self.per_label.iter().find(|l| l.label == label).map(|l| l.f1)
    }
}

fn membership(set: &[usize], num_labels: usize) -> Result<Vec<bool>> {
    let mut m = vec![false; num_labels];
    for &l in set {
        *m.get_mut(l)
            .ok_or_else(|| KrfError::Data(format!("label {l} out of range for {num_labels} labels")))? = true;
    }
    Ok(m)
}

/// Index of the highest score; ties go to the lowest index.
pub fn top_label(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose top-scored label is outside the gold set.
pub fn one_error(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> Result<f64> {
    if scores.len() != gold.len() {
        return Err(KrfError::Data(format!("{} score rows for {} gold sets", scores.len(), gold.len())));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let mut misses = 0usize;
    for (n, (s, g)) in scores.iter().zip(gold).enumerate() {
        if g.is_empty() {
            return Err(KrfError::Data(format!("sample {n} has an empty gold set")));
        }
        if s.is_empty() {
            return Err(KrfError::Data(format!("sample {n} has no scores")));
        }
        if !g.contains(&top_label(s)) {
            misses += 1;
        }
    }
    Ok(misses as f64 / scores.len() as f64)
}

/// Symmetric-difference size summed over samples, divided by `N·|C|`.
pub fn hamming_loss(pred: &[Vec<usize>], gold: &[Vec<usize>], num_labels: usize) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(KrfError::Data(format!("{} predictions for {} gold sets", pred.len(), gold.len())));
    }
    if pred.is_empty() || num_labels == 0 {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (membership(p, num_labels)?, membership(g, num_labels)?);
        wrong += p.iter().zip(&g).filter(|(a, b)| a != b).count();
    }
    Ok(wrong as f64 / (pred.len() * num_labels) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// `num / den` with `0/0 = 0`.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn label_counts(pred: &[Vec<usize>], gold: &[Vec<usize>], num_labels: usize) -> Result<Vec<Counts>> {
    if pred.len() != gold.len() {
        return Err(KrfError::Data(format!("{} predictions for {} gold sets", pred.len(), gold.len())));
    }
    let mut counts = vec![Counts::default(); num_labels];
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (membership(p, num_labels)?, membership(g, num_labels)?);
        for (c, (&pi, &gi)) in counts.iter_mut().zip(p.iter().zip(&g)) {
            match (pi, gi) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(counts)
}

/// (macro F1 over all labels, micro F1 from pooled counts, per-label counts).
pub fn f1_scores(pred: &[Vec<usize>], gold: &[Vec<usize>], num_labels: usize) -> Result<(f64, f64, Vec<Counts>)> {
    let counts = label_counts(pred, gold, num_labels)?;
    let macro_f1 = if num_labels == 0 {
        0.0
    } else {
        counts.iter().map(Counts::f1).sum::<f64>() / num_labels as f64
    };
    let pooled = counts.iter().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    Ok((macro_f1, pooled.f1(), counts))
}

/// Full report; `styles` names the labels in index order.
pub fn evaluate(styles: &[String], scores: &[Vec<f64>], pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<EvalReport> {
    let c = styles.len();
    let (macro_f1, micro_f1, counts) = f1_scores(pred, gold, c)?;
    Ok(EvalReport {
        one_error: one_error(scores, gold)?,
        hamming_loss: hamming_loss(pred, gold, c)?,
        macro_f1,
        micro_f1,
        per_label: styles
            .iter()
            .zip(&counts)
            .map(|(s, k)| LabelReport {
                label: s.clone(),
                precision: k.precision(),
                recall: k.recall(),
                f1: k.f1(),
                support: k.tp + k.fn_,
            })
            .collect(),
    })
}
