//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! hard criterion fails. Criteria 7 and 8 are trends and only flag.
//!
//! Run with `cargo test --release --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use guidespace::ablation::{run_variant, Variant};
use guidespace::adbm::{batch_weights, confidence};
use guidespace::assignment::hungarian;
use guidespace::decoupling::build_decoupling_sets;
use guidespace::losses::{guide_loss, pull_loss, push_loss};
use guidespace::metrics::roc_auc;
use guidespace::rng::seeded;
use guidespace::space::{analytic_theta_ij, mean_off_diagonal, pairwise_angles, solve_guide_space, GuideSpace};
use guidespace::synthdata::{generate, GenSpec, SyntheticDataset};
use guidespace::trainer::{gradient_check, TrainConfig};
use guidespace::vecops::{dot, norm};
use rand::Rng as _;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Report {
    hard_failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, hard: bool, detail: String) {
        let tag = match (pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FLAG",
        };
        if !pass && hard {
            self.hard_failures += 1;
        }
        println!("[{tag}] criterion {id}: {detail}");
    }
}

fn residual(gs: &GuideSpace) -> (f64, f64) {
    let c0 = gs.theta0_deg.to_radians().cos();
    let angle = gs.g_f.iter().map(|g| (dot(&gs.g_r, g) - c0).abs()).fold(0.0, f64::max);
    let unit = std::iter::once(&gs.g_r).chain(&gs.g_f).map(|v| (norm(v) - 1.0).abs()).fold(0.0, f64::max);
    (angle, unit)
}

fn table_angles(r: &mut Report, solved: &mut Vec<GuideSpace>) {
    let expected = [109.47, 107.05, 100.19, 90.00, 77.43, 63.26, 48.19];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for (k, theta0) in (90..=150).step_by(10).enumerate() {
        let (gs, _) = solve_guide_space(16, 4, f64::from(theta0), 0).unwrap();
        let m = mean_off_diagonal(&pairwise_angles(&gs));
        worst = worst.max((m - expected[k]).abs());
        got.push(format!("{m:.2}"));
        solved.push(gs);
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(1, worst < 0.5 && secs < 10.0, true, format!("angles [{}], max error {worst:.4} deg (< 0.5), {secs:.2} s (< 10)", got.join(", ")));
}

fn analytic_oracle(r: &mut Report, solved: &mut Vec<GuideSpace>) {
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(n..=32);
        let theta0 = rng.random_range(60.0..=160.0);
        let (gs, _) = solve_guide_space(d, n, theta0, i).unwrap();
        let want = analytic_theta_ij(theta0, n).unwrap();
        let a = pairwise_angles(&gs);
        for (p, row) in a.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                if p != q {
                    worst = worst.max((v - want).abs());
                }
            }
        }
        solved.push(gs);
    }
    r.line(2, worst < 0.1, true, format!("50 random (N, d, theta0), max |theta_ij - analytic| = {worst:.2e} deg (< 0.1)"));
}

fn residuals(r: &mut Report, solved: &[GuideSpace]) {
    let (mut a, mut u): (f64, f64) = (0.0, 0.0);
    for gs in solved {
        let (ai, ui) = residual(gs);
        a = a.max(ai);
        u = u.max(ui);
    }
    r.line(3, a < 1e-6 && u < 1e-9, true, format!("{} spaces, max |g_r.g_f - cos theta0| = {a:.2e} (< 1e-6), max |norm - 1| = {u:.2e} (< 1e-9)", solved.len()));
}

fn gradients(r: &mut Report) {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = common::grad_instance(100 + seed, seed % 2 == 1);
        let rep = gradient_check(&inst.enc, &inst.clf, &inst.inputs(), &inst.cfg, &inst.gs).unwrap();
        worst = worst.max(rep.max_rel_error);
    }
    r.line(4, worst < 1e-4, true, format!("20 instances, max relative error {worst:.2e} (< 1e-4)"));
}

fn brute_force(r: &mut Report) {
    let identity = |n: usize| -> BTreeMap<usize, usize> { (1..=n).map(|t| (t, t - 1)).collect() };
    let mut err = [0.0f64; 5];
    let mut set_mismatch = 0;
    let mut rng = seeded(77);
    for seed in 0..100 {
        let inst = common::instance(5000 + seed, 8, 64);
        let phi = identity(inst.gs.num_forgery);
        if !inst.queue.is_empty() {
            let k = rng.random_range(1..=16);
            let c = confidence(&inst.batch, &inst.queue, k).unwrap().c;
            for (ci, a) in c.iter().zip(&inst.batch) {
                err[0] = err[0].max((ci - common::brute_confidence(a, &inst.queue, k)).abs());
            }
            for (w, b) in batch_weights(&c).unwrap().iter().zip(common::brute_weights(&c)) {
                err[1] = err[1].max((w - b).abs());
            }
        }
        let sets: Vec<_> = inst.batch.iter().map(|a| build_decoupling_sets(a, &inst.queue)).collect();
        for (a, s) in inst.batch.iter().zip(&sets) {
            if *s != common::brute_sets(a, &inst.queue) {
                set_mismatch += 1;
            }
        }
        let pos: Vec<Vec<usize>> = sets.iter().map(|s| s.0.clone()).collect();
        let neg: Vec<Vec<usize>> = sets.iter().map(|s| s.1.clone()).collect();
        let g = guide_loss(&inst.batch, &phi, &inst.gs, &inst.queue, &inst.weights, inst.tau).unwrap();
        let pl = pull_loss(&inst.batch, &pos, &inst.queue, &inst.gs, &inst.weights, inst.tau, 10).unwrap();
        let ps = push_loss(&inst.batch, &neg, &inst.queue, &inst.gs, &inst.weights, inst.tau, 10).unwrap();
        err[2] = err[2].max((g - common::brute_guide_loss(&inst, &phi)).abs());
        err[2] = err[2].max((pl - common::brute_set_loss(&inst, &pos, 10, -1.0)).abs());
        err[2] = err[2].max((ps - common::brute_set_loss(&inst, &neg, 10, 1.0)).abs());

        let n = rng.random_range(1..=7);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let (_, total) = hungarian(&cost).unwrap();
        err[3] = err[3].max((total - common::brute_assignment(&cost)).abs());
    }
    let pass = err.iter().all(|&e| e < 1e-9) && set_mismatch == 0;
    r.line(
        5,
        pass,
        true,
        format!(
            "100 instances, max deviation: confidence {:.1e}, weights {:.1e}, losses {:.1e}, hungarian {:.1e}, set mismatches {set_mismatch} (< 1e-9)",
            err[0], err[1], err[2], err[3]
        ),
    );
}

/// AUC of the real-pattern projection `-sum_W0 (w . x)`: uses only what a
/// model could learn from the training domains.
fn real_pattern_auc(ds: &SyntheticDataset) -> (f64, f64) {
    let score = |x: &[f64]| -ds.signal_bases[0].iter().map(|w| dot(w, x)).sum::<f64>();
    let auc = |split: &[guidespace::synthdata::Sample]| {
        let s: Vec<f64> = split.iter().map(|p| score(&p.x)).collect();
        let y: Vec<u8> = split.iter().map(|p| p.y).collect();
        roc_auc(&s, &y).unwrap()
    };
    (auc(&ds.test_heldout), auc(&ds.test_in))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Runs {
    base: TrainConfig,
    spec: GenSpec,
    cache: BTreeMap<(String, u64), (f64, f64)>,
}

impl Runs {
    /// Mean (held-out, in-domain) AUC over [`SEEDS`].
    fn mean(&mut self, variant: Variant, theta0: f64) -> (f64, f64) {
        let (mut h, mut i) = (Vec::new(), Vec::new());
        for &seed in &SEEDS {
            let key = (format!("{variant}@{theta0}"), seed);
            let base = TrainConfig { theta0, ..self.base.clone() };
            let spec = self.spec.clone();
            let v = *self.cache.entry(key).or_insert_with(|| {
                let row = run_variant(variant, &base, &spec, seed).unwrap();
                (row.heldout_auc, row.in_domain_auc)
            });
            h.push(v.0);
            i.push(v.1);
        }
        (mean(&h), mean(&i))
    }
}

fn generalization(r: &mut Report, runs: &mut Runs) {
    let start = Instant::now();
    let (full_h, full_i) = runs.mean(Variant::Full, 120.0);
    let (ce_h, _) = runs.mean(Variant::Ce2, 120.0);
    let secs = start.elapsed().as_secs_f64();
    let gap = full_h - ce_h;
    let (mut oh, mut oi) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        let (h, i) = real_pattern_auc(&generate(&GenSpec { seed, ..runs.spec.clone() }).unwrap());
        oh.push(h);
        oi.push(i);
    }
    r.line(
        6,
        gap >= 0.05 && full_i >= 0.95 && secs < 900.0,
        true,
        format!(
            "held-out AUC full {full_h:.4} vs ce-2 {ce_h:.4}, gap {gap:+.4} (>= 0.05); in-domain full {full_i:.4} (>= 0.95); {secs:.0} s (< 900); \
             real-pattern projection reference: held-out {:.4}, in-domain {:.4}",
            mean(&oh),
            mean(&oi)
        ),
    );
}

fn ablation_order(r: &mut Report, runs: &mut Runs) {
    let full = runs.mean(Variant::Full, 120.0).0;
    let push = runs.mean(Variant::NoPush, 120.0).0;
    let pull = runs.mean(Variant::NoPull, 120.0).0;
    let guide = runs.mean(Variant::NoGuide, 120.0).0;
    let decouple = runs.mean(Variant::NoDecouple, 120.0).0;
    let pass = full >= push && push >= pull && (full - guide) >= (full - decouple);
    r.line(
        7,
        pass,
        false,
        format!("held-out AUC full {full:.4}, no-push {push:.4}, no-pull {pull:.4}, no-guide {guide:.4}, no-decouple {decouple:.4}"),
    );
}

fn theta_sweep(r: &mut Report, runs: &mut Runs) {
    let a90 = runs.mean(Variant::Full, 90.0).0;
    let a120 = runs.mean(Variant::Full, 120.0).0;
    let a150 = runs.mean(Variant::Full, 150.0).0;
    r.line(8, a120 >= a90 && a120 >= a150, false, format!("held-out AUC theta0 90: {a90:.4}, 120: {a120:.4}, 150: {a150:.4}"));
}

fn determinism(r: &mut Report) {
    use guidespace::cli::{run, MANIFEST_FILE, METRICS_FILE};
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let first = run(["guidespace", "train", "--out", a.to_str().unwrap()], &mut o, &mut e);
    let m = a.join(MANIFEST_FILE);
    let second = run(["guidespace", "train", "--manifest", m.to_str().unwrap(), "--out", b.to_str().unwrap()], &mut o, &mut e);
    let same = first == 0
        && second == 0
        && std::fs::read(a.join(METRICS_FILE)).ok().zip(std::fs::read(b.join(METRICS_FILE)).ok()).is_some_and(|(x, y)| !x.is_empty() && x == y);
    r.line(9, same, true, format!("default run replayed from its manifest, metrics byte-identical: {same}"));
}

fn main() {
    let mut r = Report { hard_failures: 0 };
    let mut solved = Vec::new();
    table_angles(&mut r, &mut solved);
    analytic_oracle(&mut r, &mut solved);
    residuals(&mut r, &solved);
    gradients(&mut r);
    brute_force(&mut r);
    let mut runs = Runs { base: TrainConfig::synthetic(), spec: GenSpec::default(), cache: BTreeMap::new() };
    generalization(&mut r, &mut runs);
    ablation_order(&mut r, &mut runs);
    theta_sweep(&mut r, &mut runs);
    determinism(&mut r);
    println!("{} hard criteria failed", r.hard_failures);
    if r.hard_failures > 0 {
        std::process::exit(1);
    }
}
