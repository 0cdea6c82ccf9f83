//! Runs the ablation grid on the synthetic benchmark and prints mean AUCs.
//!
//! Usage: `cargo run --release --example ablation -- [seeds] [variant...]`

use guidespace::ablation::{run_grid, summarize, Variant};
use guidespace::synthdata::GenSpec;
use guidespace::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let variants: Vec<Variant> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
    let seeds: Vec<u64> = (0..seeds).collect();
    let start = std::time::Instant::now();
    let rows = run_grid(&variants, &TrainConfig::synthetic(), &GenSpec::default(), &seeds)?;
    for r in &rows {
        println!("{:<12} seed {:>2}  in-domain {:.4}  held-out {:.4}", r.variant, r.seed, r.in_domain_auc, r.heldout_auc);
    }
    println!("{:<12} {:>10} {:>10}", "variant", "held-out", "in-domain");
    for (v, held, ind) in summarize(&rows, &variants) {
        println!("{:<12} {:>10.4} {:>10.4}", v.name(), held, ind);
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
