//! Mean time to reach a vertex from (x, 1-x), compared with x(1-x)/A.

use brownian_reduction::simplex::{run_ensemble, CorrelationModel, EnsembleConfig, NormVector, StepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = 2.0;
    let model = CorrelationModel::uniform(2, a)?;
    for x in [0.1, 0.2, 0.5, 0.8] {
        let cfg = EnsembleConfig { n: 10_000, dt: 1e-3, t_max: 100.0, seed: 7, step: StepConfig::default() };
        let r = run_ensemble(&NormVector::new(vec![x, 1.0 - x])?, &model, &cfg)?;
        let exact = x * (1.0 - x) / a;
        println!(
            "x = {x:.1}: mean {:.4} ± {:.4}, exact {exact:.4}",
            r.mean_hitting_time,
            r.hitting_time_standard_error()
        );
    }
    Ok(())
}
