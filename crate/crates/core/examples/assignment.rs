//! Matches forgery domains to guide embeddings from their mean features.
//!
//! Usage: `cargo run --example assignment`

use std::collections::BTreeMap;

use guidespace::assignment::{hungarian, match_domains};
use guidespace::rng::{gaussian_vec, seeded};
use guidespace::space::solve_guide_space;
use guidespace::vecops::{axpy, normalized};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
    let (perm, total) = hungarian(&cost)?;
    println!("cost matrix {cost:?}: rows -> columns {perm:?}, total {total}");

    let (gs, _) = solve_guide_space(8, 4, 120.0, 0)?;
    let mut rng = seeded(1);
    // Each domain's mean sits near a shuffled guide.
    let hidden = [2, 0, 3, 1];
    let means: BTreeMap<usize, Vec<f64>> = (1..=4)
        .map(|t| {
            let mut m = gs.g_f[hidden[t - 1]].clone();
            axpy(0.3, &gaussian_vec(&mut rng, 8), &mut m);
            (t, normalized(&m))
        })
        .collect();
    let m = match_domains(&means, &gs)?;
    for (t, j) in &m.mapping {
        println!("domain {t} -> g_f{j} (planted g_f{})", hidden[t - 1]);
    }
    println!("total cost {:.4}", m.cost);
    Ok(())
}
