//! Training losses: guide loss, weighted cross-entropy, pull/push
//! decoupling losses and their weighted total.
//!
//! The three contrastive losses share one denominator: for an anchor `v_i`
//! the softmax normaliser runs over every queue feature and every guide
//! embedding (`V ∪ G`). [`ContrastiveBatch`] computes those logits once per
//! batch so the value and the gradient of any combination of the three
//! losses cost a single pass. Queue entries and guide embeddings are
//! constants; gradients are taken with respect to the anchors only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::GuideSpace;
use crate::vecops::{axpy, dot, log_sum_exp, norm, sigmoid};

/// A unit feature with its binary label `y`, domain label `t` (0 = real)
/// and cluster label `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub v: Vec<f64>,
    pub y: u8,
    pub t: usize,
    pub rho: usize,
}

impl LabeledFeature {
    pub fn new(v: Vec<f64>, y: u8, t: usize, rho: usize) -> Result<Self> {
        if (norm(&v) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("feature must be unit length".into()));
        }
        if y > 1 || (t == 0) != (y == 0) {
            return Err(Error::InvalidArgument(format!(
                "label mismatch: y = {y} with domain t = {t}"
            )));
        }
        Ok(Self { v, y, t, rho })
    }

    /// Builds a feature whose binary label follows from the domain label.
    pub fn from_domain(v: Vec<f64>, t: usize, rho: usize) -> Result<Self> {
        Self::new(v, u8::from(t > 0), t, rho)
    }
}

/// Per-component loss values and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub guide: f64,
    pub ce: f64,
    pub pull: f64,
    pub push: f64,
    pub total: f64,
}

/// `total = g1 * guide + g2 * ce + g3 * pull + g4 * push`.
pub fn total_loss(guide: f64, ce: f64, pull: f64, push: f64, gamma: [f64; 4]) -> LossBreakdown {
    LossBreakdown {
        guide,
        ce,
        pull,
        push,
        total: gamma[0] * guide + gamma[1] * ce + gamma[2] * pull + gamma[3] * push,
    }
}

pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} samples",
            weights.len(),
            n
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "sample weights must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

const PROB_CLAMP: f64 = 1e-12;

/// Weighted binary cross-entropy on probabilities.
pub fn ce_loss(p: &[f64], y: &[u8], weights: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            p.len(),
            y.len()
        )));
    }
    check_weights(weights, p.len())?;
    Ok(p.iter()
        .zip(y)
        .zip(weights)
        .map(|((&pi, &yi), &w)| {
            let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let yi = f64::from(yi);
            -w * (yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln())
        })
        .sum())
}

/// Weighted binary cross-entropy on logits, with the gradient with respect
/// to each logit. The gradient is zero where the probability is clamped.
pub fn binary_ce_from_logits(logits: &[f64], y: &[u8], weights: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((&z, &yi), &w)| {
            let p = sigmoid(z);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let yf = f64::from(yi);
            loss -= w * (yf * pc.ln() + (1.0 - yf) * (1.0 - pc).ln());
            if pc == p {
                w * (p - yf)
            } else {
                0.0
            }
        })
        .collect();
    (loss, grad)
}

/// Weighted multi-class cross-entropy over `logits[i]` with target class
/// `targets[i]`, and its gradient.
pub fn multiclass_ce_from_logits(
    logits: &[Vec<f64>],
    targets: &[usize],
    weights: &[f64],
) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((z, &t), &w)| {
            let lse = log_sum_exp(z);
            loss -= w * (z[t] - lse);
            z.iter()
                .enumerate()
                .map(|(k, &zk)| w * ((zk - lse).exp() - if k == t { 1.0 } else { 0.0 }))
                .collect()
        })
        .collect();
    (loss, grad)
}

/// Anchor logits against `V ∪ G`, computed once per batch.
///
/// Contrast indices `0..queue_len` address queue entries in order; index
/// `queue_len` is `g_r` and `queue_len + 1 + j` is `g_f[j]`.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    tau: f64,
    queue_len: usize,
    contrast: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
    lse: Vec<f64>,
    /// Softmax-weighted mean of the contrast vectors, per anchor.
    expectation: Vec<Vec<f64>>,
}

impl ContrastiveBatch {
    pub fn new(anchors: &[Vec<f64>], queue: &[LabeledFeature], gs: &GuideSpace, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        let contrast: Vec<Vec<f64>> = queue
            .iter()
            .map(|q| q.v.clone())
            .chain(gs.embeddings().map(<[f64]>::to_vec))
            .collect();
        let d = gs.d;
        if let Some(bad) = anchors.iter().find(|a| a.len() != d) {
            return Err(Error::ShapeMismatch(format!(
                "anchor of length {} in a {d}-dimensional space",
                bad.len()
            )));
        }
        if queue.iter().any(|q| q.v.len() != d) {
            return Err(Error::ShapeMismatch("queue feature dimension mismatch".into()));
        }
        let mut logits = Vec::with_capacity(anchors.len());
        let mut lse = Vec::with_capacity(anchors.len());
        let mut expectation = Vec::with_capacity(anchors.len());
        for a in anchors {
            let row: Vec<f64> = contrast.iter().map(|c| dot(a, c) / tau).collect();
            let l = log_sum_exp(&row);
            let mut e = vec![0.0; d];
            for (c, &r) in contrast.iter().zip(&row) {
                axpy((r - l).exp(), c, &mut e);
            }
            logits.push(row);
            lse.push(l);
            expectation.push(e);
        }
        Ok(Self {
            tau,
            queue_len: queue.len(),
            contrast,
            logits,
            lse,
            expectation,
        })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn queue_len(&self) -> usize {
        self.queue_len
    }

    /// Contrast index of guide embedding `g_r` (`guide = None`) or `g_f[j]`.
    pub fn guide_index(&self, guide: Option<usize>) -> usize {
        self.queue_len + guide.map_or(0, |j| j + 1)
    }

    /// `log(exp(l_ij) / sum_k exp(l_ik))`.
    pub fn log_ratio(&self, anchor: usize, contrast: usize) -> f64 {
        self.logits[anchor][contrast] - self.lse[anchor]
    }

    /// Evaluates `sum_i sum_(j, c) c * log_ratio(i, j)` for the given
    /// per-anchor `(contrast index, coefficient)` lists, and its gradient
    /// with respect to every anchor.
    pub fn weighted_sum(&self, terms: &[Vec<(usize, f64)>]) -> (f64, Vec<Vec<f64>>) {
        let d = self.expectation.first().map_or(0, Vec::len);
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(self.len());
        for (i, anchor_terms) in terms.iter().enumerate() {
            let mut g = vec![0.0; d];
            let mut coef_sum = 0.0;
            for &(j, c) in anchor_terms {
                value += c * self.log_ratio(i, j);
                axpy(c / self.tau, &self.contrast[j], &mut g);
                coef_sum += c;
            }
            axpy(-coef_sum / self.tau, &self.expectation[i], &mut g);
            grads.push(g);
        }
        (value, grads)
    }

    /// Per-anchor terms of the guide loss.
    pub fn guide_terms(&self, targets: &[Option<usize>], weights: &[f64]) -> Vec<Vec<(usize, f64)>> {
        targets
            .iter()
            .zip(weights)
            .map(|(&g, &w)| vec![(self.guide_index(g), -w)])
            .collect()
    }

    /// Per-anchor terms of the pull (`sign = -1`) or push (`sign = +1`) loss.
    pub fn set_terms(
        &self,
        members: &[Vec<usize>],
        weights: &[f64],
        quota: usize,
        sign: f64,
    ) -> Vec<Vec<(usize, f64)>> {
        let scale = sign / (1.0 + quota as f64);
        members
            .iter()
            .zip(weights)
            .map(|(m, &w)| m.iter().map(|&j| (j, scale * w)).collect())
            .collect()
    }
}

fn anchors_of(batch: &[LabeledFeature]) -> Vec<Vec<f64>> {
    batch.iter().map(|f| f.v.clone()).collect()
}

/// Resolves the guide target of each sample: `None` for `g_r`, `Some(j)`
/// for `g_f[j]`.
pub fn guide_targets(batch: &[LabeledFeature], assignments: &BTreeMap<usize, usize>) -> Result<Vec<Option<usize>>> {
    batch
        .iter()
        .map(|f| {
            if f.t == 0 {
                Ok(None)
            } else {
                assignments
                    .get(&f.t)
                    .copied()
                    .map(Some)
                    .ok_or(Error::UnassignedDomain(f.t))
            }
        })
        .collect()
}

/// Guide loss. `assignments` maps each forgery domain to the index of its
/// forgery guide embedding in `gs.g_f`.
pub fn guide_loss(
    batch: &[LabeledFeature],
    assignments: &BTreeMap<usize, usize>,
    gs: &GuideSpace,
    queue: &[LabeledFeature],
    weights: &[f64],
    tau: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_weights(weights, batch.len())?;
    let targets = guide_targets(batch, assignments)?;
    if let Some(j) = targets.iter().flatten().find(|&&j| j >= gs.num_forgery) {
        return Err(Error::InvalidArgument(format!("guide index {j} out of range")));
    }
    let cb = ContrastiveBatch::new(&anchors_of(batch), queue, gs, tau)?;
    Ok(cb.weighted_sum(&cb.guide_terms(&targets, weights)).0)
}

fn decoupling_loss(
    batch: &[LabeledFeature],
    members: &[Vec<usize>],
    queue: &[LabeledFeature],
    gs: &GuideSpace,
    weights: &[f64],
    tau: f64,
    quota: usize,
    sign: f64,
) -> Result<f64> {
    if members.len() != batch.len() {
        return Err(Error::ShapeMismatch("one sampled set per anchor is required".into()));
    }
    check_weights(weights, batch.len())?;
    if members.iter().flatten().any(|&j| j >= queue.len()) {
        return Err(Error::InvalidArgument("sampled index outside the queue".into()));
    }
    let cb = ContrastiveBatch::new(&anchors_of(batch), queue, gs, tau)?;
    Ok(cb.weighted_sum(&cb.set_terms(members, weights, quota, sign)).0)
}

/// Push loss over sampled negatives (queue indices), normalised by `1 + n_neg`.
pub fn push_loss(
    batch: &[LabeledFeature],
    negatives: &[Vec<usize>],
    queue: &[LabeledFeature],
    gs: &GuideSpace,
    weights: &[f64],
    tau: f64,
    n_neg: usize,
) -> Result<f64> {
    decoupling_loss(batch, negatives, queue, gs, weights, tau, n_neg, 1.0)
}

/// Pull loss over sampled positives (queue indices), normalised by `1 + n_pos`.
pub fn pull_loss(
    batch: &[LabeledFeature],
    positives: &[Vec<usize>],
    queue: &[LabeledFeature],
    gs: &GuideSpace,
    weights: &[f64],
    tau: f64,
    n_pos: usize,
) -> Result<f64> {
    decoupling_loss(batch, positives, queue, gs, weights, tau, n_pos, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::solve_guide_space;

    fn unit(v: &[f64]) -> Vec<f64> {
        crate::vecops::normalized(v)
    }

    /// Guide-space in R^3 with g_r = e1 and g_f[0] at 120 degrees in the
    /// e1/e2 plane.
    fn plane_space() -> GuideSpace {
        let t = 120f64.to_radians();
        GuideSpace {
            d: 3,
            num_forgery: 1,
            theta0_deg: 120.0,
            g_r: vec![1.0, 0.0, 0.0],
            g_f: vec![vec![t.cos(), t.sin(), 0.0]],
        }
    }

    #[test]
    fn guide_loss_real_anchor_on_g_r() {
        let gs = plane_space();
        let batch = vec![LabeledFeature::new(gs.g_r.clone(), 0, 0, 0).unwrap()];
        let loss = guide_loss(&batch, &BTreeMap::new(), &gs, &[], &[1.0], 1.0).unwrap();
        let expected = (1.0 + (-1.5f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.20141).abs() < 1e-5);
    }

    #[test]
    fn guide_loss_orthogonal_anchor() {
        let gs = plane_space();
        let batch = vec![LabeledFeature::new(vec![0.0, 0.0, 1.0], 0, 0, 0).unwrap()];
        let loss = guide_loss(&batch, &BTreeMap::new(), &gs, &[], &[1.0], 1.0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn guide_loss_errors() {
        let gs = plane_space();
        assert!(matches!(
            guide_loss(&[], &BTreeMap::new(), &gs, &[], &[], 1.0),
            Err(Error::Empty(_))
        ));
        let fake = vec![LabeledFeature::new(gs.g_f[0].clone(), 1, 1, 0).unwrap()];
        assert!(matches!(
            guide_loss(&fake, &BTreeMap::new(), &gs, &[], &[1.0], 1.0),
            Err(Error::UnassignedDomain(1))
        ));
        let real = vec![LabeledFeature::new(gs.g_r.clone(), 0, 0, 0).unwrap()];
        assert!(guide_loss(&real, &BTreeMap::new(), &gs, &[], &[0.5], 1.0).is_err());
    }

    #[test]
    fn ce_loss_examples() {
        assert!((ce_loss(&[0.5], &[1], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(ce_loss(&[1.0 - 1e-12], &[1], &[1.0]).unwrap() < 1e-11);
        assert!((ce_loss(&[0.5, 0.5], &[1, 0], &[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(ce_loss(&[0.5, 0.5], &[1], &[1.0]).is_err());
        assert!(ce_loss(&[0.0], &[1], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn push_loss_identical_negative() {
        let gs = plane_space();
        let anchor = vec![0.0, 0.0, 1.0];
        let batch = vec![LabeledFeature::new(anchor.clone(), 0, 0, 0).unwrap()];
        let queue = vec![LabeledFeature::new(anchor, 1, 1, 0).unwrap()];
        let loss = push_loss(&batch, &[vec![0]], &queue, &gs, &[1.0], 1.0, 10).unwrap();
        let e = std::f64::consts::E;
        let expected = (e / (e + 2.0)).ln() / 11.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - (-0.0501)).abs() < 1e-4);
    }

    #[test]
    fn empty_sets_contribute_nothing() {
        let gs = plane_space();
        let batch = vec![LabeledFeature::new(vec![0.0, 1.0, 0.0], 0, 0, 0).unwrap()];
        let queue = vec![LabeledFeature::new(vec![0.0, 0.0, 1.0], 1, 1, 0).unwrap()];
        assert_eq!(push_loss(&batch, &[vec![]], &queue, &gs, &[1.0], 1.0, 10).unwrap(), 0.0);
        assert_eq!(pull_loss(&batch, &[vec![]], &queue, &gs, &[1.0], 1.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn pull_is_negated_push_with_matching_quota() {
        let (gs, _) = solve_guide_space(4, 2, 120.0, 1).unwrap();
        let batch = vec![LabeledFeature::new(unit(&[1.0, 2.0, 0.5, -1.0]), 1, 1, 0).unwrap()];
        let queue = vec![
            LabeledFeature::new(unit(&[0.3, 0.1, 0.5, 0.2]), 1, 1, 1).unwrap(),
            LabeledFeature::new(unit(&[-0.3, 0.7, 0.1, 0.2]), 0, 0, 1).unwrap(),
        ];
        let pull = pull_loss(&batch, &[vec![0, 1]], &queue, &gs, &[1.0], 1.0, 10).unwrap();
        let push = push_loss(&batch, &[vec![0, 1]], &queue, &gs, &[1.0], 1.0, 10).unwrap();
        assert!((pull + push).abs() < 1e-15);
        // The anchor's own positive dominates nothing here, but the log ratio is negative.
        assert!(pull > 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let b = total_loss(1.0, 1.0, 1.0, 1.0, [1.0, 0.5, 0.01, 0.005]);
        assert!((b.total - 1.515).abs() < 1e-12);
        assert_eq!(total_loss(3.0, 2.0, 1.0, 4.0, [0.0; 4]).total, 0.0);
        assert_eq!(total_loss(3.0, 2.0, 1.0, 4.0, [1.0, 0.0, 0.0, 0.0]).total, 3.0);
    }

    #[test]
    fn labeled_feature_invariants() {
        assert!(LabeledFeature::new(vec![1.0, 0.0], 1, 0, 0).is_err());
        assert!(LabeledFeature::new(vec![1.0, 0.0], 0, 2, 0).is_err());
        assert!(LabeledFeature::new(vec![2.0, 0.0], 0, 0, 0).is_err());
        assert!(LabeledFeature::from_domain(vec![0.0, 1.0], 3, 1).unwrap().y == 1);
    }

    #[test]
    fn multiclass_ce_gradient_sums_to_zero() {
        let (loss, g) = multiclass_ce_from_logits(&[vec![0.2, -1.0, 3.0]], &[1], &[1.0]);
        assert!(loss > 0.0);
        assert!(g[0].iter().sum::<f64>().abs() < 1e-12);
    }
}
