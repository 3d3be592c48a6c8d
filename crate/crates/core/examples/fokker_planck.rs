//! Density of a two-channel diffusion with absorbing walls, written as CSV.
//!
//! cargo run --example fokker_planck > density.csv

use brownian_reduction::fokker_planck::{solve, FpGrid, Scheme, SolveConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = FpGrid::from_pair_coefficient(199, 1.0)?;
    let x0 = 0.3;
    let cfg = SolveConfig { t_end: 1.0, dt: 1e-3, snapshot_every: 100, scheme: Scheme::Implicit };
    let sol = solve(&grid, x0, &cfg)?;
    eprintln!(
        "absorbed at x=0: {:.6}, at x=1: {:.6}, still diffusing: {:.2e}",
        sol.absorbed_mass_0(),
        sol.absorbed_mass_1(),
        sol.final_interior_mass()
    );
    sol.write_density_csv(std::io::stdout().lock())?;
    Ok(())
}
