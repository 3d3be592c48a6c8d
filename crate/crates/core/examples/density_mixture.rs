//! Combined fluctuation variance of a two-component mixture.

use brownian_reduction::mixture::{combine_fluctuation_variance, combine_norms, Component, Ensemble};
use brownian_reduction::rng::stream_rng;
use brownian_reduction::simplex::{sample_path, CorrelationModel, NormVector, StepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dt = 1e-6;
    let p0 = NormVector::new(vec![0.5, 0.5])?;
    let mut components = Vec::new();
    for (i, (weight, a)) in [(0.25, 1.0), (0.75, 0.2)].into_iter().enumerate() {
        let model = CorrelationModel::uniform(2, a)?;
        let series = sample_path(&p0, &model, dt, 20_000, &mut stream_rng(3, i as u64), StepConfig::default())?;
        components.push(Component { weight, series });
    }
    let ensemble = Ensemble::new(components)?;
    let var = combine_fluctuation_variance(&ensemble, dt)?;
    println!("combined variance per step {:.4e}, weighted A·dt {:.4e}", var[0], (0.25 * 1.0 + 0.75 * 0.2) * dt);
    let combined = combine_norms(&ensemble);
    println!("combined p at the end: {:?}", combined.values().last().unwrap());
    Ok(())
}
