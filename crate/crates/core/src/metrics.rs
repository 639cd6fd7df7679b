//! Classification and ranking metrics for the probe harness.

use crate::error::{Error, Result};

fn check(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::validation("metrics over an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(bad) = predictions
        .iter()
        .chain(labels)
        .find(|&&c| c >= num_classes)
    {
        return Err(Error::validation(format!(
            "class {bad} outside 0..{num_classes}"
        )));
    }
    Ok(())
}

/// Per-class (tp, fp, fn).
fn confusion(predictions: &[usize], labels: &[usize], num_classes: usize) -> Vec<(u64, u64, u64)> {
    let mut c = vec![(0, 0, 0); num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            c[p].0 += 1;
        } else {
            c[p].1 += 1;
            c[l].2 += 1;
        }
    }
    c
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of per-class F1. A class that is neither predicted nor
/// present counts as 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check(predictions, labels, num_classes)?;
    let c = confusion(predictions, labels, num_classes);
    Ok(c.iter().map(|&(tp, fp, fn_)| f1(tp, fp, fn_)).sum::<f64>() / num_classes as f64)
}

/// F1 over pooled counts; equals accuracy for single-label predictions.
pub fn micro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check(predictions, labels, num_classes)?;
    let (tp, fp, fn_) = confusion(predictions, labels, num_classes)
        .into_iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(f1(tp, fp, fn_))
}

/// Average precision: scores are sorted descending (stable, so tied scores
/// keep input order) and precision is summed at each positive.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s} in pr_auc")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::validation(
            "pr_auc needs both positive and negative labels",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}
