//! Winner frequencies of an absorbing simplex diffusion against the initial
//! squared norms.
//!
//! cargo run --release --example born_rule -- 0.2 0.3 0.5

use brownian_reduction::simplex::{run_ensemble, CorrelationModel, EnsembleConfig, NormVector, StepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let p = if args.is_empty() { vec![0.3, 0.7] } else { args };
    let p0 = NormVector::new(p.clone())?;
    let model = CorrelationModel::uniform(p.len(), 1.0)?;
    let cfg = EnsembleConfig { n: 20_000, dt: 1e-3, t_max: 100.0, seed: 42, step: StepConfig::default() };
    let report = run_ensemble(&p0, &model, &cfg)?;

    println!("channel   p0      freq    z");
    for (j, z) in report.z_scores(&p).iter().enumerate() {
        println!("{j:>7}   {:.3}   {:.4}  {z:.2}", p[j], report.frequencies[j]);
    }
    println!("{} trajectories, {} timed out", report.n_trajectories, report.n_timeouts);
    Ok(())
}
