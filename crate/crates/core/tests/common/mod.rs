//! Independent explicit-loop re-implementations and random instances shared
//! by the integration tests.
#![allow(dead_code)]

use guidespace::losses::LabeledFeature;
use guidespace::rng::{gaussian_vec, seeded, Rng};
use guidespace::space::GuideSpace;
use rand::Rng as _;

pub fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v = gaussian_vec(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn feature(rng: &mut Rng, d: usize, n_forgery: usize, n_clusters: usize) -> LabeledFeature {
    let t = rng.random_range(0..=n_forgery);
    let rho = rng.random_range(0..n_clusters);
    LabeledFeature::from_domain(unit(rng, d), t, rho).unwrap()
}

/// Random guide-space with the right structure (not an optimum).
pub fn random_space(rng: &mut Rng, d: usize, n: usize, theta0: f64) -> GuideSpace {
    let g_r = unit(rng, d);
    let th = theta0.to_radians();
    let g_f = (0..n)
        .map(|_| {
            let mut u = unit(rng, d);
            let p = dot(&u, &g_r);
            for i in 0..d {
                u[i] -= p * g_r[i];
            }
            let nu = dot(&u, &u).sqrt();
            (0..d).map(|i| th.cos() * g_r[i] + th.sin() * u[i] / nu).collect()
        })
        .collect();
    GuideSpace { d, num_forgery: n, theta0_deg: theta0, g_r, g_f }
}

pub struct Instance {
    pub gs: GuideSpace,
    pub batch: Vec<LabeledFeature>,
    pub queue: Vec<LabeledFeature>,
    pub weights: Vec<f64>,
    pub tau: f64,
}

pub fn instance(seed: u64, max_b: usize, max_q: usize) -> Instance {
    let mut rng = seeded(seed);
    let d = rng.random_range(2..=6);
    let n = rng.random_range(1..=d.min(4));
    let theta0 = rng.random_range(95.0..150.0);
    let gs = random_space(&mut rng, d, n, theta0);
    let b = rng.random_range(1..=max_b);
    let q = rng.random_range(0..=max_q);
    let clusters = rng.random_range(1..=4);
    let batch = (0..b).map(|_| feature(&mut rng, d, n, clusters)).collect();
    let queue = (0..q).map(|_| feature(&mut rng, d, n, clusters)).collect();
    let raw: Vec<f64> = (0..b).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let tau = rng.random_range(0.1..2.0);
    Instance { gs, batch, queue, weights, tau }
}

/// Denominator of the shared softmax for anchor `v`, over queue then guides.
fn denominator(v: &[f64], queue: &[LabeledFeature], gs: &GuideSpace, tau: f64) -> f64 {
    let mut s = 0.0;
    for q in queue {
        s += (dot(v, &q.v) / tau).exp();
    }
    s += (dot(v, &gs.g_r) / tau).exp();
    for g in &gs.g_f {
        s += (dot(v, g) / tau).exp();
    }
    s
}

pub fn brute_guide_loss(inst: &Instance, phi: &std::collections::BTreeMap<usize, usize>) -> f64 {
    let mut loss = 0.0;
    for (i, f) in inst.batch.iter().enumerate() {
        let target = if f.t == 0 { &inst.gs.g_r } else { &inst.gs.g_f[phi[&f.t]] };
        let num = (dot(&f.v, target) / inst.tau).exp();
        loss -= inst.weights[i] * (num / denominator(&f.v, &inst.queue, &inst.gs, inst.tau)).ln();
    }
    loss
}

/// Push (`sign = 1`) or pull (`sign = -1`) loss.
pub fn brute_set_loss(inst: &Instance, members: &[Vec<usize>], quota: usize, sign: f64) -> f64 {
    let mut loss = 0.0;
    for (i, f) in inst.batch.iter().enumerate() {
        let den = denominator(&f.v, &inst.queue, &inst.gs, inst.tau);
        let mut inner = 0.0;
        for &j in &members[i] {
            inner += ((dot(&f.v, &inst.queue[j].v) / inst.tau).exp() / den).ln();
        }
        loss += sign * inst.weights[i] * inner / (1.0 + quota as f64);
    }
    loss
}

pub fn brute_sets(anchor: &LabeledFeature, queue: &[LabeledFeature]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for j in 0..queue.len() {
        if queue[j].t == anchor.t && queue[j].rho != anchor.rho {
            pos.push(j);
        }
        if queue[j].t != anchor.t && queue[j].rho == anchor.rho {
            neg.push(j);
        }
    }
    (pos, neg)
}

/// Confidence by a full stable sort of the queue.
pub fn brute_confidence(anchor: &LabeledFeature, queue: &[LabeledFeature], k: usize) -> f64 {
    let mut order: Vec<(f64, usize)> = queue.iter().enumerate().map(|(j, q)| (dot(&anchor.v, &q.v), j)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let kk = k.min(queue.len());
    let mut total = 0.0;
    for &(s, j) in &order[..kk] {
        let eps = (1.0 + s) / 2.0;
        let tj = queue[j].t;
        let mu = if anchor.t == 0 || tj == 0 { 1.0 } else { 0.5 };
        total += if tj == anchor.t { eps } else { -mu * eps };
    }
    total / kk as f64
}

pub fn brute_weights(c: &[f64]) -> Vec<f64> {
    let mut z = 0.0;
    for &ci in c {
        z += (-ci).exp();
    }
    c.iter().map(|ci| (-ci).exp() / z).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum total cost over all permutations.
pub fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
    permutations(cost.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Lexicographically smallest optimal permutation.
pub fn brute_assignment_lex(cost: &[Vec<f64>], tol: f64) -> Vec<usize> {
    let best = brute_assignment(cost);
    let mut perms = permutations(cost.len());
    perms.sort();
    perms
        .into_iter()
        .find(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() <= best + tol)
        .unwrap()
}

/// Owned data for one random objective evaluation on a small network.
pub struct GradInstance {
    pub enc: guidespace::nn::Encoder,
    pub clf: guidespace::nn::Classifier,
    pub x: Vec<Vec<f64>>,
    pub t: Vec<usize>,
    pub queue: Vec<LabeledFeature>,
    pub weights: Vec<f64>,
    pub phi: std::collections::BTreeMap<usize, usize>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    pub cfg: guidespace::trainer::TrainConfig,
    pub gs: GuideSpace,
}

impl GradInstance {
    pub fn inputs(&self) -> guidespace::trainer::ObjectiveInputs<'_> {
        guidespace::trainer::ObjectiveInputs {
            x: self.x.iter().map(Vec::as_slice).collect(),
            t: self.t.clone(),
            queue: &self.queue,
            weights: self.weights.clone(),
            phi: self.phi.clone(),
            positives: self.positives.clone(),
            negatives: self.negatives.clone(),
            contrastive: true,
        }
    }
}

pub fn grad_instance(seed: u64, multiclass: bool) -> GradInstance {
    use guidespace::decoupling::{build_decoupling_sets, sample_sets_with};
    use guidespace::nn::{Classifier, Encoder};
    use rand::seq::SliceRandom;

    let mut rng = seeded(seed);
    let m = rng.random_range(3..=6);
    let d = rng.random_range(3..=5);
    let n = rng.random_range(2..=d.min(4));
    let (gs, _) = guidespace::space::solve_guide_space(d, n, rng.random_range(95.0..150.0), seed).unwrap();
    let enc = Encoder::new(m, &[rng.random_range(4..=8)], d, &mut rng);
    let clf = Classifier::new(d, if multiclass { n + 1 } else { 1 }, &mut rng);
    let b = rng.random_range(2..=8);
    let clusters = 3;
    let x: Vec<Vec<f64>> = (0..b).map(|_| gaussian_vec(&mut rng, m)).collect();
    let t: Vec<usize> = (0..b).map(|_| rng.random_range(0..=n)).collect();
    let rho: Vec<usize> = (0..b).map(|_| rng.random_range(0..clusters)).collect();
    let queue: Vec<LabeledFeature> = (0..rng.random_range(4..=16)).map(|_| feature(&mut rng, d, n, clusters)).collect();
    let raw: Vec<f64> = (0..b).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let phi = (1..=n).zip(perm).collect();
    let cfg = guidespace::trainer::TrainConfig {
        tau: rng.random_range(0.3..1.5),
        gamma1: rng.random_range(0.1..1.0),
        gamma2: rng.random_range(0.1..1.0),
        gamma3: rng.random_range(0.1..1.0),
        gamma4: rng.random_range(0.1..1.0),
        n_pos: 3,
        n_neg: 3,
        d,
        multiclass,
        ..Default::default()
    };
    let (mut positives, mut negatives) = (Vec::new(), Vec::new());
    for i in 0..b {
        let anchor = LabeledFeature { v: vec![0.0; d], y: u8::from(t[i] > 0), t: t[i], rho: rho[i] };
        let (p, q) = build_decoupling_sets(&anchor, &queue);
        let (p, q) = sample_sets_with(&p, &q, cfg.n_pos, cfg.n_neg, &mut rng);
        positives.push(p);
        negatives.push(q);
    }
    GradInstance { enc, clf, x, t, queue, weights, phi, positives, negatives, cfg, gs }
}
