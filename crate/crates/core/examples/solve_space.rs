//! Solves guide-spaces over a range of θ0 and compares the mean pairwise
//! forgery angle with the closed form.
//!
//! Usage: `cargo run --release --example solve_space -- [d] [N]`

use guidespace::space::{analytic_theta_ij, mean_off_diagonal, pairwise_angles, solve_guide_space};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let d: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(16);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    println!("{:>7} {:>10} {:>10} {:>6}", "theta0", "solved", "analytic", "iters");
    for theta0 in (90..=150).step_by(10) {
        let theta0 = f64::from(theta0);
        let (gs, report) = solve_guide_space(d, n, theta0, 0)?;
        let solved = mean_off_diagonal(&pairwise_angles(&gs));
        println!("{theta0:>7.0} {solved:>10.3} {:>10.3} {:>6}", analytic_theta_ij(theta0, n)?, report.iterations);
    }
    Ok(())
}
