//! Utility and group-fairness metrics. Values are fractions in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Argmax of each row; ties go to the lower class index.
pub fn hard_labels(probs: &DenseMatrix) -> Vec<u8> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

fn check_lengths(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("lengths {a} and {b}")));
    }
    if a == 0 {
        return Err(Error::Undefined(format!("{op} of an empty set")));
    }
    Ok(())
}

fn positive_rate(pred: &[u8], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut pos, mut total) = (0usize, 0usize);
    for (i, &p) in pred.iter().enumerate() {
        if keep(i) {
            total += 1;
            pos += (p == 1) as usize;
        }
    }
    (total > 0).then(|| pos as f64 / total as f64)
}

/// `|P(ŷ=1 | s=0) - P(ŷ=1 | s=1)|`.
pub fn delta_dp(pred: &[u8], sensitive: &[u8]) -> Result<f64> {
    check_lengths(pred.len(), sensitive.len(), "delta_dp")?;
    let r0 = positive_rate(pred, |i| sensitive[i] == 0).ok_or(Error::EmptyGroup(0))?;
    let r1 = positive_rate(pred, |i| sensitive[i] == 1).ok_or(Error::EmptyGroup(1))?;
    Ok((r0 - r1).abs())
}

/// `|P(ŷ=1 | s=0, y=1) - P(ŷ=1 | s=1, y=1)|`.
pub fn delta_eo(pred: &[u8], labels: &[u8], sensitive: &[u8]) -> Result<f64> {
    check_lengths(pred.len(), labels.len(), "delta_eo")?;
    check_lengths(pred.len(), sensitive.len(), "delta_eo")?;
    let tpr = |g: u8| {
        positive_rate(pred, |i| sensitive[i] == g && labels[i] == 1).ok_or_else(|| {
            Error::Undefined(format!(
                "equal opportunity undefined: sensitive group {g} has no positive labels"
            ))
        })
    };
    Ok((tpr(0)? - tpr(1)?).abs())
}

/// Area under the ROC curve via the rank-sum statistic; ties count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len(), "auc")?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auc scores"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("auc needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

pub fn accuracy(pred: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(pred.len(), labels.len(), "accuracy")?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// F1 of the positive class; 0 when precision and recall are both 0.
pub fn f1_binary(pred: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(pred.len(), labels.len(), "f1")?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in pred.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Metrics over one evaluation mask. Undefined quantities are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
    pub n0: usize,
    pub n1: usize,
}

impl EvalReport {
    /// Evaluates class-probability rows on the nodes in `mask`.
    pub fn evaluate(probs: &DenseMatrix, labels: &[u8], sensitive: &[u8], mask: &[usize]) -> Result<Self> {
        if probs.cols() < 2 {
            return Err(Error::shape("evaluate", "need at least two classes"));
        }
        let sub = probs.select_rows(mask);
        let pred = hard_labels(&sub);
        let y: Vec<u8> = mask.iter().map(|&i| labels[i]).collect();
        let s: Vec<u8> = mask.iter().map(|&i| sensitive[i]).collect();
        let scores: Vec<f64> = (0..sub.rows()).map(|i| sub[(i, 1)]).collect();
        let n1 = s.iter().filter(|&&v| v == 1).count();
        Ok(Self {
            accuracy: accuracy(&pred, &y)?,
            f1: f1_binary(&pred, &y)?,
            auc: auc(&scores, &y).unwrap_or(f64::NAN),
            delta_dp: delta_dp(&pred, &s).unwrap_or(f64::NAN),
            delta_eo: delta_eo(&pred, &y, &s).unwrap_or(f64::NAN),
            n0: s.len() - n1,
            n1,
        })
    }
}

/// Spearman rank correlation, or `None` when either series is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    check_lengths(a.len(), b.len(), "spearman")?;
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    Ok(pearson(&ra, &rb))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
