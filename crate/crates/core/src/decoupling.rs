//! Feature queue, cluster labels and the pull/push candidate sets.

use std::io::Write;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::losses::LabeledFeature;
use crate::rng::{seeded, Rng};

/// FIFO store of recent batch features. Eviction removes whole batches,
/// oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureQueue {
    capacity: usize,
    entries: Vec<LabeledFeature>,
    batch_sizes: std::collections::VecDeque<usize>,
    enqueued: usize,
    evicted: usize,
}

impl FeatureQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            batch_sizes: Default::default(),
            enqueued: 0,
            evicted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order, oldest first.
    pub fn entries(&self) -> &[LabeledFeature] {
        &self.entries
    }

    pub fn total_enqueued(&self) -> usize {
        self.enqueued
    }

    pub fn total_evicted(&self) -> usize {
        self.evicted
    }

    pub fn enqueue_batch(&mut self, batch: Vec<LabeledFeature>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if batch.len() > self.capacity {
            return Err(Error::InvalidArgument(format!(
                "batch of {} does not fit a queue of capacity {}",
                batch.len(),
                self.capacity
            )));
        }
        self.enqueued += batch.len();
        self.batch_sizes.push_back(batch.len());
        self.entries.extend(batch);
        let mut drop = 0;
        while self.entries.len() - drop > self.capacity {
            drop += self.batch_sizes.pop_front().expect("queue batch bookkeeping");
        }
        if drop > 0 {
            self.entries.drain(..drop);
            self.evicted += drop;
        }
        Ok(())
    }
}

/// Result of k-means clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Label of every training point.
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ClusterModel {
    /// Index of the nearest centroid, lowest index on ties.
    pub fn assign(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's k-means with k-means++ seeding.
pub fn kmeans_cluster(features: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if features.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} points cannot form {k} clusters",
            features.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("features have differing lengths".into()));
    }
    let mut rng = seeded(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng);

    let mut labels = vec![usize::MAX; features.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut dists = vec![0.0; features.len()];
        for (i, x) in features.iter().enumerate() {
            let (j, d) = nearest(&centroids, x);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            dists[i] = d;
        }
        repair_empty_clusters(features, &mut centroids, &mut labels, &mut dists, k);
        history.push(dists.iter().sum());
        iterations += 1;
        if !changed || iterations >= KMEANS_MAX_ITER {
            break;
        }
        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in features.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        labels,
        iterations,
        objective_history: history,
    })
}

fn plus_plus_init(features: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    use rand::Rng as _;
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features[first].clone()];
    let mut d2: Vec<f64> = features.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // All remaining points coincide with a centroid.
            (0..n).find(|&i| !chosen[i]).expect("n >= k")
        };
        chosen[pick] = true;
        let c = features[pick].clone();
        for (x, d) in features.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Reseeds every empty cluster with the point farthest from its centroid.
fn repair_empty_clusters(
    features: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
    k: usize,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..features.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("more points than clusters");
        centroids[empty] = features[far].clone();
        labels[far] = empty;
        dists[far] = 0.0;
    }
}

/// Queue indices of the pull set (same domain, different cluster) and the
/// push set (different domain, same cluster) for `anchor`.
pub fn build_decoupling_sets(anchor: &LabeledFeature, queue: &[LabeledFeature]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (j, q) in queue.iter().enumerate() {
        match (q.t == anchor.t, q.rho == anchor.rho) {
            (true, false) => pos.push(j),
            (false, true) => neg.push(j),
            _ => {}
        }
    }
    (pos, neg)
}

fn sample_from(set: &[usize], quota: usize, rng: &mut Rng) -> Vec<usize> {
    if set.len() <= quota {
        return set.to_vec();
    }
    let mut out: Vec<usize> = index::sample(rng, set.len(), quota).into_iter().map(|i| set[i]).collect();
    out.sort_unstable();
    out
}

/// Uniformly samples at most `n_pos` / `n_neg` members without replacement,
/// drawing from `rng`. Returned indices are sorted.
pub fn sample_sets_with(
    pos: &[usize],
    neg: &[usize],
    n_pos: usize,
    n_neg: usize,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let p = sample_from(pos, n_pos, rng);
    let n = sample_from(neg, n_neg, rng);
    (p, n)
}

pub fn sample_sets(pos: &[usize], neg: &[usize], n_pos: usize, n_neg: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    sample_sets_with(pos, neg, n_pos, n_neg, &mut seeded(seed))
}

/// Writes `sample_id,t,rho` rows.
pub fn write_cluster_csv<W: Write>(out: W, domains: &[usize], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "t", "rho"])?;
    for (i, (t, rho)) in domains.iter().zip(labels).enumerate() {
        w.write_record([i.to_string(), t.to_string(), rho.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
