//! Rank metrics for binary scores. Equal scores always form one block: they
//! count as half-concordant in AUROC and enter precision-recall cuts together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auroc: f64,
    pub auprc: f64,
    pub ppv_at_recall_30: f64,
    pub ppv_at_recall_50: f64,
}

impl MetricSet {
    pub fn compute(scores: &[f64], labels: &[bool]) -> Result<MetricSet> {
        Ok(MetricSet {
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            ppv_at_recall_30: ppv_at_recall(scores, labels, 0.3)?,
            ppv_at_recall_50: ppv_at_recall(scores, labels, 0.5)?,
        })
    }

    pub const NAMES: [&'static str; 4] = ["auroc", "auprc", "ppv_at_recall_30", "ppv_at_recall_50"];

    pub fn values(&self) -> [f64; 4] {
        [self.auroc, self.auprc, self.ppv_at_recall_30, self.ppv_at_recall_50]
    }
}

/// Descending-score blocks of `(positives, negatives)`.
fn blocks(scores: &[f64], labels: &[bool]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric(format!("non-finite score at index {i}")));
    }
    let pos = labels.iter().filter(|&&y| y).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            out.push((0, 0));
            prev = Some(scores[i]);
        }
        let b = out.last_mut().expect("block pushed");
        if labels[i] {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    Ok((out, pos, neg))
}

/// Mann–Whitney AUROC: (concordant + ½ tied) / (P · N).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (blocks, pos, neg) = blocks(scores, labels)?;
    // Twice the statistic, to keep everything in integers.
    let mut twice: u64 = 0;
    let mut neg_below = neg;
    for (p, n) in blocks {
        neg_below -= n;
        twice += 2 * p * neg_below + p * n;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64)
}

/// Block-tied average precision: Σ ΔRecall · Precision over descending cuts.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (blocks, pos, _) = blocks(scores, labels)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in blocks {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Precision at the first descending cut whose recall reaches `target`.
pub fn ppv_at_recall(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter(format!("recall target {target} outside (0, 1]")));
    }
    let (blocks, pos, _) = blocks(scores, labels)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in blocks {
        tp += p;
        fp += n;
        if tp as f64 >= target * pos as f64 - 1e-9 {
            return Ok(tp as f64 / (tp + fp) as f64);
        }
    }
    unreachable!("the full cut has recall 1")
}
