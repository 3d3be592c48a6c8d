//! Estimates the pair correlation from quantum norm fluctuations and feeds it
//! into a diffusion ensemble started from the quantum norms.

use brownian_reduction::quantum::{evolve, init_state, CouplingSpec, EvolveConfig, Field, GaussianPacket, GridSpec};
use brownian_reduction::series::estimate_correlations;
use brownian_reduction::simplex::{run_ensemble, CorrelationModel, EnsembleConfig, NormVector, PairMatrix, StepConfig};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::new(-20.0, 20.0, 512)?;
    let spec = CouplingSpec { lambda_x: Field::Linear { offset: 0.0, slope: 0.5 }, ..Default::default() };
    let packet = GaussianPacket { center: 2.0, width: std::f64::consts::FRAC_1_SQRT_2, momentum: 0.0 };
    let state = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet, &grid)?;
    let cfg = EvolveConfig { dt: 1e-2, n_steps: 20_000, record_every: 10, snapshot_every: None };
    let ev = evolve(&state, &spec, &grid, &cfg)?;

    let est = estimate_correlations(&ev.norm_series(), 5)?;
    let a12 = est.a[0][1];
    println!("Â12 = {a12:.4e} ± {:.1e} ({:.1} se)", est.standard_error[0][1], est.significance(0, 1));

    let model = CorrelationModel::constant(PairMatrix::new(vec![vec![0.0, a12], vec![a12, 0.0]])?);
    let p0 = NormVector::new(vec![0.36, 0.64])?;
    let cfg = EnsembleConfig { n: 10_000, dt: 0.05, t_max: 2000.0, seed: 1, step: StepConfig::default() };
    let report = run_ensemble(&p0, &model, &cfg)?;
    println!("winner frequencies {:?} against (0.36, 0.64)", report.frequencies);
    Ok(())
}
