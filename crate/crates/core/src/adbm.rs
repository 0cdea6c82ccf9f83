//! Decision-boundary adjustment: per-sample confidence from the domain
//! agreement of nearest queue neighbours, and the batch weights derived
//! from it.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabeledFeature;
use crate::vecops::{dot, softmax};

/// Confidences of one batch and the queue neighbours each was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub c: Vec<f64>,
    /// Queue indices of the nearest neighbours, most similar first.
    pub neighbor_indices: Vec<Vec<usize>>,
}

/// Penalty applied to a neighbour from a different domain.
///
/// A real anchor weighs every fake neighbour fully. A fake anchor weighs a
/// real neighbour fully and a neighbour from another forgery domain by half.
pub fn mismatch_penalty(anchor_t: usize, neighbor_t: usize) -> f64 {
    if anchor_t == 0 || neighbor_t == 0 {
        1.0
    } else {
        0.5
    }
}

/// Indices of the `k` most similar queue entries to `anchor`, ordered by
/// descending similarity with ties broken by ascending index.
pub fn nearest_neighbors(anchor: &[f64], queue: &[LabeledFeature], k: usize) -> (Vec<usize>, Vec<f64>) {
    let sims: Vec<f64> = queue.iter().map(|q| dot(anchor, &q.v)).collect();
    let mut order: Vec<usize> = (0..queue.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering { sims[*b].total_cmp(&sims[*a]).then(a.cmp(b)) };
    let k = k.min(queue.len());
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    let top_sims = order.iter().map(|&j| sims[j]).collect();
    (order, top_sims)
}

/// Confidence of every batch sample against the queue.
pub fn confidence(batch: &[LabeledFeature], queue: &[LabeledFeature], k: usize) -> Result<ConfidenceReport> {
    if queue.is_empty() {
        return Err(Error::Empty("feature queue"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut c = Vec::with_capacity(batch.len());
    let mut neighbor_indices = Vec::with_capacity(batch.len());
    for anchor in batch {
        let (idx, sims) = nearest_neighbors(&anchor.v, queue, k);
        let total: f64 = idx
            .iter()
            .zip(&sims)
            .map(|(&j, &s)| {
                let eps = 0.5 * (1.0 + s);
                let tj = queue[j].t;
                if tj == anchor.t {
                    eps
                } else {
                    -mismatch_penalty(anchor.t, tj) * eps
                }
            })
            .sum();
        c.push(total / idx.len() as f64);
        neighbor_indices.push(idx);
    }
    Ok(ConfidenceReport { c, neighbor_indices })
}

/// `softmax(-c)`: low-confidence samples receive higher weight.
pub fn batch_weights(c: &[f64]) -> Result<Vec<f64>> {
    if c.is_empty() {
        return Err(Error::Empty("confidence vector"));
    }
    let neg: Vec<f64> = c.iter().map(|x| -x).collect();
    Ok(softmax(&neg))
}

/// Writes one CSV header line for [`write_confidence_rows`].
pub fn write_confidence_header<W: Write + ?Sized>(out: &mut W) -> Result<()> {
    writeln!(out, "iteration,sample_index,confidence,weight")?;
    Ok(())
}

/// Appends one row per sample for a given iteration.
pub fn write_confidence_rows<W: Write + ?Sized>(out: &mut W, iteration: usize, c: &[f64], weights: &[f64]) -> Result<()> {
    for (i, (ci, wi)) in c.iter().zip(weights).enumerate() {
        writeln!(out, "{iteration},{i},{ci},{wi}")?;
    }
    Ok(())
}
