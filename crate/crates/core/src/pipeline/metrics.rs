use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed,
    /// Threshold chosen to maximise F1 on the evaluated scores themselves.
    Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub counts: Confusion,
    /// Keyed by the fraction formatted as in the request (e.g. `"0.01"`).
    pub rec_at_top_frac: BTreeMap<String, f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_aligned(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Arity {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    Ok(())
}

/// Precision, recall and F1 with `score >= threshold` as predicted fraud.
pub fn f1_score(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalReport> {
    check_aligned(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalReport {
        f1,
        precision,
        recall,
        threshold,
        threshold_mode: ThresholdMode::Fixed,
        counts: c,
        rec_at_top_frac: BTreeMap::new(),
    })
}

/// F1 at the score threshold that maximises it (ties: the highest threshold).
pub fn best_threshold_f1(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    check_aligned(scores, labels)?;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let mut best = f1_score(scores, labels, f64::INFINITY)?;
    for t in candidates {
        let r = f1_score(scores, labels, t)?;
        if r.f1 > best.f1 {
            best = r;
        }
    }
    best.threshold_mode = ThresholdMode::Best;
    Ok(best)
}

/// Share of all frauds found among the `ceil(frac * n)` highest scores.
/// Equal scores keep input order. Returns 0 when there is no fraud.
pub fn recall_at_top_frac(scores: &[f64], labels: &[bool], frac: f64) -> Result<f64> {
    check_aligned(scores, labels)?;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("top fraction {frac} not in (0, 1]")));
    }
    let total = labels.iter().filter(|&&y| y).count();
    if total == 0 {
        log::warn!("recall_at_top_frac: no fraud labels, reporting 0");
        return Ok(0.0);
    }
    let n = scores.len();
    let k = ((frac * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let hits = order[..k].iter().filter(|&&i| labels[i]).count();
    Ok(hits as f64 / total as f64)
}

/// Full report: fixed or best threshold plus recall at each top fraction.
pub fn evaluate(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    mode: ThresholdMode,
    top_fracs: &[f64],
) -> Result<EvalReport> {
    let mut report = match mode {
        ThresholdMode::Fixed => f1_score(scores, labels, threshold)?,
        ThresholdMode::Best => best_threshold_f1(scores, labels)?,
    };
    for &f in top_fracs {
        report
            .rec_at_top_frac
            .insert(f.to_string(), recall_at_top_frac(scores, labels, f)?);
    }
    Ok(report)
}
