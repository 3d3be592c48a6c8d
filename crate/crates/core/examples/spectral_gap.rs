//! Long-time decay of the surviving mass against the smallest eigenvalue of
//! the generator, and 1/λ₁ against the exact mean absorption time.

use brownian_reduction::fokker_planck::{
    build_generator, smallest_eigenvalue, solve, survival_decay_rate, FpGrid, Scheme, SolveConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = 1.0;
    for n in [49, 99, 199, 399] {
        let grid = FpGrid::from_pair_coefficient(n, a)?;
        let lambda = smallest_eigenvalue(&build_generator(&grid))?;
        let sol = solve(&grid, 0.5, &SolveConfig { t_end: 6.0, dt: 1e-3, snapshot_every: 0, scheme: Scheme::Implicit })?;
        let decay = survival_decay_rate(&sol)?;
        println!("n = {n:>3}: λ₁ = {lambda:.5} (continuum {:.5}), decay {decay:.5}", a / 2.0 * std::f64::consts::PI.powi(2));
    }
    let lambda = a / 2.0 * std::f64::consts::PI.powi(2);
    println!("1/λ₁ = {:.4}, mean absorption time from 0.5 = {:.4}", 1.0 / lambda, 0.25 / a);
    Ok(())
}
