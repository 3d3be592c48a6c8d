//! Channel norms under off-diagonal (Rabi) and diagonal (pointer) coupling.

use brownian_reduction::quantum::{evolve, init_state, CouplingSpec, EvolveConfig, Field, GaussianPacket, GridSpec};
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::new(-20.0, 20.0, 256)?;
    let packet = GaussianPacket { center: 0.0, width: 1.0, momentum: 0.0 };
    let cfg = EvolveConfig { dt: 1e-3, n_steps: 4000, record_every: 500, snapshot_every: None };

    let lambda = 0.5;
    let rabi = CouplingSpec { lambda_x: Field::Constant { value: lambda }, ..Default::default() };
    let state = init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), packet, &grid)?;
    let ev = evolve(&state, &rabi, &grid, &cfg)?;
    println!("rabi:     t      p1        cos²(λt)");
    for (t, p1) in ev.times.iter().zip(&ev.p1) {
        println!("      {t:6.2}  {p1:.8}  {:.8}", (lambda * t).cos().powi(2));
    }

    let pointer = CouplingSpec { lambda_z: Field::Linear { offset: 0.0, slope: 1.0 }, ..Default::default() };
    let state = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet, &grid)?;
    let ev = evolve(&state, &pointer, &grid, &cfg)?;
    println!("pointer: p1 drifts by at most {:.1e}", ev.max_channel_drift());
    Ok(())
}
