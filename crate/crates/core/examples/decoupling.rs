//! Clusters inputs with k-means and builds the pull and push sets of one
//! anchor against a small queue.
//!
//! Usage: `cargo run --example decoupling`

use guidespace::decoupling::{build_decoupling_sets, kmeans_cluster, FeatureQueue};
use guidespace::losses::LabeledFeature;
use guidespace::rng::{gaussian_vec, seeded};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeded(3);
    let centres = [[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]];
    let pts: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let c = centres[i % 3];
            let n = gaussian_vec(&mut rng, 2);
            vec![c[0] + n[0], c[1] + n[1]]
        })
        .collect();
    let model = kmeans_cluster(&pts, 3, 0)?;
    println!("k-means: {} iterations, objective {:?}", model.iterations, model.objective_history);

    let mut queue = FeatureQueue::new(6);
    for (i, p) in pts.iter().take(9).enumerate() {
        let v = guidespace::vecops::normalized(p);
        queue.enqueue_batch(vec![LabeledFeature::from_domain(v, i % 2, model.labels[i])?])?;
    }
    println!("queue holds {} of {} enqueued", queue.len(), queue.total_enqueued());
    for (j, f) in queue.entries().iter().enumerate() {
        println!("  [{j}] t {} rho {}", f.t, f.rho);
    }
    let anchor = LabeledFeature::from_domain(vec![1.0, 0.0], 1, model.labels[0])?;
    let (pos, neg) = build_decoupling_sets(&anchor, queue.entries());
    println!("anchor t 1 rho {}: pull {pos:?}, push {neg:?}", anchor.rho);
    Ok(())
}
