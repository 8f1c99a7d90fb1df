use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Precision, recall and F1 of one class. `None` when the ratio is 0/0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// One-vs-rest ROC-AUC.
    pub roc_auc: Option<f64>,
}

/// How the headline precision, recall and F1 are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Two classes: the scores of the positive class (label 1).
    Binary,
    /// Unweighted mean over classes present in the labels.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: Averaging,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub samples: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    /// Classes with no labelled samples, left out of the macro means.
    pub absent_classes: Vec<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p?, r?) {
        (p, r) if p + r == 0.0 => Some(0.0),
        (p, r) => Some(2.0 * p * r / (p + r)),
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Rank-statistic ROC-AUC: the probability that a random positive scores
/// above a random negative, ties counted as half. `None` without both
/// positives and negatives.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidArgument(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, with tied groups sharing their
    // mean rank, keeps everything in integers.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&s| positive[s]).count() as u128;
        // Ranks i+1..=j+1 average to (i+j+2)/2.
        twice_rank_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(Some(twice_u as f64 / (2 * p * n) as f64))
}

/// Metrics from an `N x k` matrix of class probabilities and true labels.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize]) -> Result<MetricsReport> {
    if probs.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} rows for {} labels", probs.len(), labels.len())));
    }
    let k = probs[0].len();
    if k < 2 || probs.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument("probability rows need a common width of at least 2".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (row, &y) in probs.iter().zip(labels) {
        confusion[y][argmax(row)] += 1;
    }
    let n = labels.len();
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|r| r[c]).sum();
        let tp = confusion[c][c];
        let precision = if support == 0 { ratio(tp, predicted) } else { Some(ratio(tp, predicted).unwrap_or(0.0)) };
        let recall = ratio(tp, support);
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        per_class.push(ClassMetrics {
            class: c,
            support,
            predicted,
            precision,
            recall,
            f1: harmonic(precision, recall),
            roc_auc: roc_auc(&scores, &positive)?,
        });
    }
    let absent_classes: Vec<usize> = per_class.iter().filter(|m| m.support == 0).map(|m| m.class).collect();
    let (averaging, precision, recall, f1, auc) = if k == 2 {
        let pos = &per_class[1];
        (Averaging::Binary, pos.precision, pos.recall, pos.f1, pos.roc_auc)
    } else {
        let present = || per_class.iter().filter(|m| m.support > 0);
        (
            Averaging::Macro,
            mean(present().map(|m| m.precision)),
            mean(present().map(|m| m.recall)),
            mean(present().map(|m| m.f1)),
            mean(present().map(|m| m.roc_auc)),
        )
    };
    Ok(MetricsReport {
        averaging,
        precision,
        recall,
        f1,
        roc_auc: auc,
        accuracy: trace as f64 / n as f64,
        samples: n,
        confusion,
        per_class,
        absent_classes,
    })
}

/// Rows of a `[N, k]` probability tensor as `f64`.
pub fn probability_rows<T: Scalar>(probs: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    match probs.shape() {
        [_, k] if *k > 0 => Ok(probs.to_f64_vec().chunks(*k).map(<[f64]>::to_vec).collect()),
        other => Err(Error::shape("probability_rows", format!("expected [N, k], got {other:?}"))),
    }
}
