//! Trains the full method on the synthetic benchmark and prints per-epoch
//! metrics, then the binary cross-entropy baseline for comparison.
//!
//! Usage: `cargo run --release --example train -- [seed] [epochs]`

use guidespace::ablation::Variant;
use guidespace::space::solve_guide_space;
use guidespace::synthdata::{generate, GenSpec};
use guidespace::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut base = TrainConfig { seed, ..TrainConfig::synthetic() };
    if let Some(e) = args.next() {
        base.epochs = e.parse()?;
    }
    let ds = generate(&GenSpec { seed, ..GenSpec::default() })?;
    let (gs, _) = solve_guide_space(base.d, ds.num_train_forgery(), base.theta0, seed)?;
    for variant in [Variant::Full, Variant::Ce2] {
        let cfg = variant.apply(&base);
        let out = train(&ds, &cfg, &gs)?;
        println!("{variant}");
        for m in &out.metrics {
            println!(
                "  epoch {:>3}  loss {:.4}  in-domain auc {:.4}  held-out auc {:.4}  phi changes {}",
                m.epoch, m.losses.total, m.in_domain_auc, m.heldout_auc, m.phi_changes
            );
        }
    }
    Ok(())
}
