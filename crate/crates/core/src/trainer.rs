//! Training loop: encoder and classifier trained on the weighted sum of the
//! guide, cross-entropy, pull and push losses, with confidence weighting,
//! a FIFO feature queue and per-iteration domain matching.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adbm::{batch_weights, confidence};
use crate::assignment::{domain_means, match_domains};
use crate::decoupling::{build_decoupling_sets, kmeans_cluster, sample_sets_with, FeatureQueue};
use crate::error::{Error, Result};
use crate::losses::{binary_ce_from_logits, multiclass_ce_from_logits, total_loss, ContrastiveBatch, LabeledFeature, LossBreakdown};
use crate::metrics::{accuracy, roc_auc};
use crate::nn::{Classifier, Encoder, Params};
use crate::rng::{derive_seed, seeded};
use crate::space::GuideSpace;
use crate::synthdata::{Sample, SyntheticDataset};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SETS: u64 = 3;
const STREAM_KMEANS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// Training hyperparameters. `Default` gives the full-scale values; see
/// [`TrainConfig::synthetic`] for the desk-scale benchmark preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    /// Neighbourhood size for confidence.
    pub k: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub batch_size: usize,
    pub queue_size: usize,
    pub epochs: usize,
    /// First (1-based) epoch whose batches are confidence weighted.
    pub adbm_start_epoch: usize,
    /// When false every sample keeps weight `1/B` throughout.
    pub adbm: bool,
    pub theta0: f64,
    pub d: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    /// Number of k-means clusters; `None` uses the dataset's nuisance
    /// cluster count.
    pub clusters: Option<usize>,
    /// Sample batches uniformly instead of round-robin over domains.
    pub uniform_batches: bool,
    /// Train the head as an `N + 1`-way classifier over domains.
    pub multiclass: bool,
    /// Keep the domain matching fixed once this (1-based) epoch has ended.
    pub freeze_phi_after_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            gamma1: 1.0,
            gamma2: 0.5,
            gamma3: 0.01,
            gamma4: 0.005,
            k: 55,
            n_pos: 10,
            n_neg: 10,
            batch_size: 256,
            queue_size: 5120,
            epochs: 60,
            adbm_start_epoch: 10,
            adbm: true,
            theta0: 120.0,
            d: 16,
            hidden: vec![64, 64],
            lr: 0.01,
            momentum: 0.9,
            lr_schedule: LrSchedule::Cosine,
            clusters: Some(500),
            uniform_batches: false,
            multiclass: false,
            freeze_phi_after_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset for the synthetic benchmark.
    pub fn synthetic() -> Self {
        Self {
            batch_size: 128,
            queue_size: 1024,
            epochs: 30,
            clusters: None,
            ..Self::default()
        }
    }

    pub fn gamma(&self) -> [f64; 4] {
        [self.gamma1, self.gamma2, self.gamma3, self.gamma4]
    }

    pub fn set_gamma(&mut self, g: [f64; 4]) {
        [self.gamma1, self.gamma2, self.gamma3, self.gamma4] = g;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.gamma().iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("loss weights must be finite and non-negative");
        }
        if self.k == 0 || self.batch_size == 0 || self.queue_size == 0 || self.d == 0 {
            return bad("k, batch_size, queue_size and d must be positive");
        }
        if !self.queue_size.is_multiple_of(self.batch_size) {
            return bad("queue_size must be a multiple of batch_size");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("lr must be non-negative and momentum in [0, 1)");
        }
        if !(self.theta0 > 0.0 && self.theta0 < 180.0) {
            return bad("theta0 must lie strictly between 0 and 180 degrees");
        }
        if self.clusters == Some(0) {
            return bad("clusters must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch_index: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = epoch_index as f64 / self.epochs.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's iterations.
    pub losses: LossBreakdown,
    pub in_domain_acc: f64,
    pub in_domain_auc: f64,
    pub heldout_acc: f64,
    pub heldout_auc: f64,
    /// Domain matching in force at the end of the epoch.
    pub phi: BTreeMap<usize, usize>,
    /// Iterations whose matching differed from the previous iteration.
    pub phi_changes: usize,
    /// Mean confidence over the epoch's weighted iterations, if any.
    pub mean_confidence: Option<f64>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Everything one evaluation of the objective depends on besides the model
/// parameters. Weights, matching and sampled sets are held fixed.
#[derive(Debug, Clone)]
pub struct ObjectiveInputs<'a> {
    pub x: Vec<&'a [f64]>,
    pub t: Vec<usize>,
    pub queue: &'a [LabeledFeature],
    pub weights: Vec<f64>,
    pub phi: BTreeMap<usize, usize>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    /// Whether the queue-dependent losses are active.
    pub contrastive: bool,
}

/// Gradients of the objective with respect to both models.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Encoder,
    pub classifier: Classifier,
}

/// Value and parameter gradient of the weighted total loss.
pub fn objective(
    enc: &Encoder,
    clf: &Classifier,
    inputs: &ObjectiveInputs,
    cfg: &TrainConfig,
    gs: &GuideSpace,
) -> Result<(LossBreakdown, Gradients)> {
    let n = inputs.x.len();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    if inputs.t.len() != n || inputs.weights.len() != n {
        return Err(Error::ShapeMismatch("labels and weights must match the batch".into()));
    }
    let traces: Vec<_> = inputs.x.iter().map(|x| enc.trace(x)).collect();
    let anchors: Vec<Vec<f64>> = traces.iter().map(|tr| tr.v.clone()).collect();
    let d = enc.feature_dim();
    let mut dv = vec![vec![0.0; d]; n];
    let [g1, g2, g3, g4] = cfg.gamma();
    let (mut guide, mut pull, mut push) = (0.0, 0.0, 0.0);

    if inputs.contrastive && (g1 > 0.0 || g3 > 0.0 || g4 > 0.0) {
        let cb = ContrastiveBatch::new(&anchors, inputs.queue, gs, cfg.tau)?;
        let mut add = |gamma: f64, terms: Vec<Vec<(usize, f64)>>| -> f64 {
            let (value, grads) = cb.weighted_sum(&terms);
            for (acc, g) in dv.iter_mut().zip(&grads) {
                crate::vecops::axpy(gamma, g, acc);
            }
            value
        };
        if g1 > 0.0 {
            let targets = inputs
                .t
                .iter()
                .map(|&t| match t {
                    0 => Ok(None),
                    t => inputs.phi.get(&t).copied().map(Some).ok_or(Error::UnassignedDomain(t)),
                })
                .collect::<Result<Vec<_>>>()?;
            guide = add(g1, cb.guide_terms(&targets, &inputs.weights));
        }
        if g3 > 0.0 {
            pull = add(g3, cb.set_terms(&inputs.positives, &inputs.weights, cfg.n_pos, -1.0));
        }
        if g4 > 0.0 {
            push = add(g4, cb.set_terms(&inputs.negatives, &inputs.weights, cfg.n_neg, 1.0));
        }
    }

    let mut grad_clf = clf.zeros_like();
    let ce;
    if clf.outputs() == 1 {
        let y: Vec<u8> = inputs.t.iter().map(|&t| u8::from(t > 0)).collect();
        let logits: Vec<f64> = anchors.iter().map(|v| clf.logits(v)[0]).collect();
        let (loss, dlogit) = binary_ce_from_logits(&logits, &y, &inputs.weights);
        ce = loss;
        if g2 > 0.0 {
            for (i, v) in anchors.iter().enumerate() {
                let dz = [g2 * dlogit[i]];
                let back = clf.backward(v, &dz, &mut grad_clf);
                crate::vecops::axpy(1.0, &back, &mut dv[i]);
            }
        }
    } else {
        let logits: Vec<Vec<f64>> = anchors.iter().map(|v| clf.logits(v)).collect();
        if let Some(&t) = inputs.t.iter().find(|&&t| t >= clf.outputs()) {
            return Err(Error::InvalidArgument(format!("domain {t} exceeds classifier outputs")));
        }
        let (loss, dlogits) = multiclass_ce_from_logits(&logits, &inputs.t, &inputs.weights);
        ce = loss;
        if g2 > 0.0 {
            for (i, v) in anchors.iter().enumerate() {
                let dz: Vec<f64> = dlogits[i].iter().map(|g| g2 * g).collect();
                let back = clf.backward(v, &dz, &mut grad_clf);
                crate::vecops::axpy(1.0, &back, &mut dv[i]);
            }
        }
    }

    let mut grad_enc = enc.zeros_like();
    for (tr, g) in traces.iter().zip(&dv) {
        enc.backward(tr, g, &mut grad_enc);
    }
    let breakdown = total_loss(guide, ce, pull, push, cfg.gamma());
    Ok((breakdown, Gradients { encoder: grad_enc, classifier: grad_clf }))
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub num_params: usize,
    pub worst_param: usize,
}

/// Compares the analytic gradient of [`objective`] with central finite
/// differences (step `1e-5`) over every parameter. The relative error of a
/// parameter is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    enc: &Encoder,
    clf: &Classifier,
    inputs: &ObjectiveInputs,
    cfg: &TrainConfig,
    gs: &GuideSpace,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-5;
    let (_, grads) = objective(enc, clf, inputs, cfg, gs)?;
    let analytic: Vec<f64> = grads.encoder.flat().into_iter().chain(grads.classifier.flat()).collect();
    let pe = enc.flat();
    let pc = clf.flat();
    let ne = pe.len();
    let loss_at = |k: usize, delta: f64| -> Result<f64> {
        let mut e = enc.clone();
        let mut c = clf.clone();
        if k < ne {
            let mut p = pe.clone();
            p[k] += delta;
            e.set_flat(&p);
        } else {
            let mut p = pc.clone();
            p[k - ne] += delta;
            c.set_flat(&p);
        }
        Ok(objective(&e, &c, inputs, cfg, gs)?.0.total)
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, num_params: analytic.len(), worst_param: 0 };
    for (k, &a) in analytic.iter().enumerate() {
        let numeric = (loss_at(k, H)? - loss_at(k, -H)?) / (2.0 * H);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = k;
        }
    }
    Ok(report)
}

/// Accuracy at threshold 0.5 and AUC of the fake probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub acc: f64,
    pub auc: f64,
}

pub fn scores(enc: &Encoder, clf: &Classifier, split: &[Sample]) -> Vec<f64> {
    split.iter().map(|s| clf.fake_probability(&enc.forward(&s.x))).collect()
}

pub fn evaluate(enc: &Encoder, clf: &Classifier, split: &[Sample]) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let p = scores(enc, clf, split);
    let y: Vec<u8> = split.iter().map(|s| s.y).collect();
    Ok(Evaluation { acc: accuracy(&p, &y, 0.5)?, auc: roc_auc(&p, &y)? })
}

/// Writes encoded features as CSV `sample_id,t,rho,f_0..f_{d-1}`.
pub fn write_feature_csv<W: Write>(out: W, enc: &Encoder, split: &[Sample], rho: &[usize]) -> Result<()> {
    if rho.len() != split.len() {
        return Err(Error::ShapeMismatch("one cluster label per sample is required".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "t".into(), "rho".into()];
    header.extend((0..enc.feature_dim()).map(|i| format!("f_{i}")));
    w.write_record(&header)?;
    for (i, (s, r)) in split.iter().zip(rho).enumerate() {
        let mut row = vec![i.to_string(), s.t.to_string(), r.to_string()];
        row.extend(enc.forward(&s.x).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trained models and the per-epoch records.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub encoder: Encoder,
    pub classifier: Classifier,
    pub metrics: Vec<MetricsRecord>,
    /// Cluster label of every training sample.
    pub clusters: Vec<usize>,
}

fn check_compatible(ds: &SyntheticDataset, cfg: &TrainConfig, gs: &GuideSpace) -> Result<()> {
    cfg.validate()?;
    gs.validate()?;
    if gs.d != cfg.d {
        return Err(Error::Config(format!("guide-space has d = {} but the config asks for d = {}", gs.d, cfg.d)));
    }
    if gs.num_forgery != ds.num_train_forgery() {
        return Err(Error::Config(format!(
            "guide-space has N = {} but the dataset has {} training forgery domains",
            gs.num_forgery,
            ds.num_train_forgery()
        )));
    }
    if (gs.theta0_deg - cfg.theta0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "guide-space theta0 = {} differs from config theta0 = {}",
            gs.theta0_deg, cfg.theta0
        )));
    }
    if ds.train.len() < cfg.batch_size {
        return Err(Error::Config("training split is smaller than one batch".into()));
    }
    Ok(())
}

/// Split into batches of exactly `B`; the trailing partial batch is dropped.
fn epoch_batches(ds: &SyntheticDataset, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = seeded(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64));
    let order: Vec<usize> = if cfg.uniform_batches {
        let mut all: Vec<usize> = (0..ds.train.len()).collect();
        all.shuffle(&mut rng);
        all
    } else {
        let n_domains = ds.num_train_forgery() + 1;
        let mut per_domain = vec![Vec::new(); n_domains];
        for (i, s) in ds.train.iter().enumerate() {
            per_domain[s.t].push(i);
        }
        for list in &mut per_domain {
            list.shuffle(&mut rng);
        }
        let longest = per_domain.iter().map(Vec::len).max().unwrap_or(0);
        (0..longest)
            .flat_map(|r| per_domain.iter().filter_map(move |l| l.get(r).copied()))
            .collect()
    };
    order.chunks_exact(cfg.batch_size).map(<[usize]>::to_vec).collect()
}

fn sgd_step<P: Params>(model: &mut P, grad: &P, velocity: &mut P, lr: f64, momentum: f64) {
    for ((l, g), v) in model.layers_mut().iter_mut().zip(grad.layers()).zip(velocity.layers_mut()) {
        for ((p, gp), vp) in l.w.iter_mut().chain(l.b.iter_mut()).zip(g.w.iter().chain(&g.b)).zip(v.w.iter_mut().chain(v.b.iter_mut())) {
            *vp = momentum * *vp + gp;
            *p -= lr * *vp;
        }
    }
}

/// Builds the models a run starts from.
pub fn init_models(ds: &SyntheticDataset, cfg: &TrainConfig) -> (Encoder, Classifier) {
    let mut rng = seeded(derive_seed(cfg.seed, STREAM_INIT, 0));
    let enc = Encoder::new(ds.input_dim(), &cfg.hidden, cfg.d, &mut rng);
    let outputs = if cfg.multiclass { ds.num_train_forgery() + 1 } else { 1 };
    let clf = Classifier::new(cfg.d, outputs, &mut rng);
    (enc, clf)
}

/// Cluster labels of the raw training inputs.
pub fn cluster_training_inputs(ds: &SyntheticDataset, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let k = cfg.clusters.unwrap_or(ds.spec.nuisance_clusters);
    let xs: Vec<Vec<f64>> = ds.train.iter().map(|s| s.x.clone()).collect();
    Ok(kmeans_cluster(&xs, k, derive_seed(cfg.seed, STREAM_KMEANS, 0))?.labels)
}

pub fn train(ds: &SyntheticDataset, cfg: &TrainConfig, gs: &GuideSpace) -> Result<TrainOutput> {
    train_logged(ds, cfg, gs, None)
}

/// As [`train`], additionally writing per-iteration confidences and weights
/// as CSV to `confidence_log` whenever they are computed.
pub fn train_logged(
    ds: &SyntheticDataset,
    cfg: &TrainConfig,
    gs: &GuideSpace,
    mut confidence_log: Option<&mut dyn Write>,
) -> Result<TrainOutput> {
    check_compatible(ds, cfg, gs)?;
    let clusters = cluster_training_inputs(ds, cfg)?;
    let (mut enc, mut clf) = init_models(ds, cfg);
    let mut vel_enc = enc.zeros_like();
    let mut vel_clf = clf.zeros_like();
    let mut queue = FeatureQueue::new(cfg.queue_size);
    let mut phi: Option<BTreeMap<usize, usize>> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut global_iter = 0usize;
    if let Some(out) = confidence_log.as_deref_mut() {
        crate::adbm::write_confidence_header(out)?;
    }
    let uniform = vec![1.0 / cfg.batch_size as f64; cfg.batch_size];

    for epoch_index in 0..cfg.epochs {
        let epoch = epoch_index + 1;
        let lr = cfg.lr_at(epoch_index);
        let batches = epoch_batches(ds, cfg, epoch_index);
        let mut sum = LossBreakdown::default();
        let mut phi_changes = 0;
        let mut conf_sum = 0.0;
        let mut conf_iters = 0usize;

        for (iteration, batch) in batches.iter().enumerate() {
            let features: Vec<LabeledFeature> = batch
                .iter()
                .map(|&i| {
                    let s = &ds.train[i];
                    LabeledFeature { v: enc.forward(&s.x), y: s.y, t: s.t, rho: clusters[i] }
                })
                .collect();
            let warm = queue.len() >= cfg.batch_size;

            let frozen = cfg.freeze_phi_after_epoch.is_some_and(|e| epoch > e);
            let matched = match &phi {
                Some(p) if frozen => p.clone(),
                _ => match_domains(&domain_means(&features, gs.num_forgery)?, gs)?.mapping,
            };
            if phi.as_ref().is_some_and(|p| *p != matched) {
                phi_changes += 1;
            }
            phi = Some(matched.clone());

            let weights = if cfg.adbm && epoch >= cfg.adbm_start_epoch && warm {
                let report = confidence(&features, queue.entries(), cfg.k)?;
                conf_sum += report.c.iter().sum::<f64>() / report.c.len() as f64;
                conf_iters += 1;
                let w = batch_weights(&report.c)?;
                if let Some(out) = confidence_log.as_deref_mut() {
                    crate::adbm::write_confidence_rows(out, global_iter, &report.c, &w)?;
                }
                w
            } else {
                uniform.clone()
            };

            let (mut positives, mut negatives) = (Vec::new(), Vec::new());
            if warm && (cfg.gamma3 > 0.0 || cfg.gamma4 > 0.0) {
                let mut rng = seeded(derive_seed(cfg.seed, STREAM_SETS, global_iter as u64));
                for f in &features {
                    let (pos, neg) = build_decoupling_sets(f, queue.entries());
                    let (p, n) = sample_sets_with(&pos, &neg, cfg.n_pos, cfg.n_neg, &mut rng);
                    positives.push(p);
                    negatives.push(n);
                }
            } else {
                positives.resize(features.len(), Vec::new());
                negatives.resize(features.len(), Vec::new());
            }

            let inputs = ObjectiveInputs {
                x: batch.iter().map(|&i| ds.train[i].x.as_slice()).collect(),
                t: features.iter().map(|f| f.t).collect(),
                queue: queue.entries(),
                weights,
                phi: matched,
                positives,
                negatives,
                contrastive: warm,
            };
            let (loss, grads) = objective(&enc, &clf, &inputs, cfg, gs)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, iteration, detail: format!("{loss:?}") });
            }
            sgd_step(&mut enc, &grads.encoder, &mut vel_enc, lr, cfg.momentum);
            sgd_step(&mut clf, &grads.classifier, &mut vel_clf, lr, cfg.momentum);

            sum.guide += loss.guide;
            sum.ce += loss.ce;
            sum.pull += loss.pull;
            sum.push += loss.push;
            sum.total += loss.total;
            queue.enqueue_batch(features)?;
            global_iter += 1;
        }

        let iters = batches.len().max(1) as f64;
        let losses = LossBreakdown {
            guide: sum.guide / iters,
            ce: sum.ce / iters,
            pull: sum.pull / iters,
            push: sum.push / iters,
            total: sum.total / iters,
        };
        let in_domain = evaluate(&enc, &clf, &ds.test_in)?;
        let heldout = evaluate(&enc, &clf, &ds.test_heldout)?;
        metrics.push(MetricsRecord {
            epoch,
            lr,
            losses,
            in_domain_acc: in_domain.acc,
            in_domain_auc: in_domain.auc,
            heldout_acc: heldout.acc,
            heldout_auc: heldout.auc,
            phi: phi.clone().unwrap_or_default(),
            phi_changes,
            mean_confidence: (conf_iters > 0).then(|| conf_sum / conf_iters as f64),
        });
    }
    Ok(TrainOutput { encoder: enc, classifier: clf, metrics, clusters })
}

/// Writes records as JSON lines.
pub fn write_metrics_jsonl<W: Write>(mut out: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line()?)?;
    }
    Ok(())
}
