//! Evaluation metrics: accuracy at a threshold and ROC AUC.

use crate::error::{Error, Result};

/// Fraction of samples whose score is on the correct side of `threshold`
/// (`score >= threshold` predicts fake).
pub fn accuracy(scores: &[f64], y: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", scores.len(), y.len())));
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let correct = scores
        .iter()
        .zip(y)
        .filter(|(&s, &yi)| u8::from(s >= threshold) == yi)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// `P(score_fake > score_real)` with ties counted one half, by the
/// Mann-Whitney rank statistic with mid-ranks.
pub fn roc_auc(scores: &[f64], y: &[u8]) -> Result<f64> {
    if scores.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", scores.len(), y.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie group i..=j.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| y[k] == 1).count() as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}
