//! Scores anchors by how well their nearest queue neighbours agree with
//! their domain, then turns the scores into batch weights.
//!
//! Usage: `cargo run --example confidence`

use guidespace::adbm::{batch_weights, confidence};
use guidespace::losses::LabeledFeature;

fn at(angle_deg: f64, t: usize) -> LabeledFeature {
    let a = angle_deg.to_radians();
    LabeledFeature::from_domain(vec![a.cos(), a.sin()], t, 0).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Real features around 0 deg, domain 1 around 120 deg, domain 2 around 240 deg.
    let queue: Vec<LabeledFeature> = [(0.0, 0), (10.0, 0), (-10.0, 0), (120.0, 1), (130.0, 1), (110.0, 1), (240.0, 2), (250.0, 2)]
        .iter()
        .map(|&(a, t)| at(a, t))
        .collect();
    let batch = vec![at(5.0, 0), at(60.0, 0), at(125.0, 1), at(180.0, 1), at(5.0, 2)];
    let report = confidence(&batch, &queue, 3)?;
    let weights = batch_weights(&report.c)?;
    println!("{:>6} {:>3} {:>8} {:>8}  neighbours", "angle", "t", "c", "lambda");
    for (i, (f, (c, w))) in batch.iter().zip(report.c.iter().zip(&weights)).enumerate() {
        let angle = f.v[1].atan2(f.v[0]).to_degrees();
        println!("{angle:>6.0} {:>3} {c:>8.4} {w:>8.4}  {:?}", f.t, report.neighbor_indices[i]);
    }
    Ok(())
}
