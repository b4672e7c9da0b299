//! Classification metrics.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::net::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    /// Also the per-class accuracy in the sense of "fraction of this class
    /// classified correctly".
    pub recall: f64,
    pub f1: f64,
    /// `(TP + TN) / total` for this class against the rest.
    pub one_vs_rest_accuracy: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    /// One-vs-rest AUC; `None` when the class is absent from the test set or
    /// is the only class present.
    pub auc: Vec<Option<f64>>,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mann-Whitney estimate of `P(score_pos > score_neg)` with ties counted as
/// one half (average ranks).
pub fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Metrics from class scores (`n x C`, higher is more likely) and true labels.
pub fn compute_metrics(scores: &Array2<f64>, labels: &[usize], names: &[String]) -> Result<Metrics> {
    let c = names.len();
    if scores.nrows() == 0 {
        return Err(Error::argument("cannot evaluate on an empty test set"));
    }
    if scores.nrows() != labels.len() || scores.ncols() != c {
        return Err(Error::argument(format!(
            "scores are {:?} for {} labels and {c} classes",
            scores.dim(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::argument(format!("label {bad} outside {c} classes")));
    }
    let total = labels.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (row, &t) in scores.axis_iter(Axis(0)).zip(labels) {
        confusion[t][argmax(row.iter().copied())] += 1;
    }
    let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
    let mut per_class = Vec::with_capacity(c);
    let mut auc = Vec::with_capacity(c);
    for k in 0..c {
        let tp = confusion[k][k];
        let support: usize = confusion[k].iter().sum();
        let predicted: usize = (0..c).map(|i| confusion[i][k]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let tn = total + tp - support - predicted;
        per_class.push(ClassMetrics {
            name: names[k].clone(),
            precision,
            recall,
            f1,
            one_vs_rest_accuracy: ratio(tp + tn, total),
            support,
        });
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        auc.push(rank_auc(&scores.column(k).to_vec(), &positive));
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / c as f64;
    Ok(Metrics {
        accuracy: ratio(trace, total),
        per_class,
        confusion,
        auc,
        macro_f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}
