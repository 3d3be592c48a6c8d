//! Weighted ensembles of norm trajectories.
//!
//! A mixed track/pattern state `ρ = Σ_α π_α |φ_α⟩⟨φ_α|` is represented by one
//! norm series per eigencomponent. Channel norms combine linearly in the
//! weights, and so do increment variances when the components fluctuate
//! independently: `(Δδp_j)² = Σ_α π_α (Δδp_jα)²`.

use serde::Serialize;
use thiserror::Error;

use crate::series::{increment_second_moments, NormSeries, SeriesError};
use crate::simplex::{CorrelationModel, PairMatrix, SimplexError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("ensemble has no components")]
    Empty,
    #[error("weight {index} = {value} is negative or not finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("component {0} does not share the channel count or time grid of component 0")]
    MismatchedGrids(usize),
    #[error("interval {dt} is not a whole number of samples of spacing {sample_dt}")]
    BadInterval { dt: f64, sample_dt: f64 },
    #[error("equivalent pair model needs two channels, got {0}")]
    NotTwoChannels(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub weight: f64,
    pub series: NormSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    components: Vec<Component>,
}

impl Ensemble {
    pub fn new(components: Vec<Component>) -> Result<Self, MixtureError> {
        let first = components.first().ok_or(MixtureError::Empty)?;
        for (index, c) in components.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(MixtureError::InvalidWeight { index, value: c.weight });
            }
            if c.series.channels() != first.series.channels() || c.series.times() != first.series.times() {
                return Err(MixtureError::MismatchedGrids(index));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MixtureError::WeightsNotNormalized(total));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    fn reference(&self) -> &NormSeries {
        &self.components[0].series
    }
}

/// `p_j(t) = Σ_α π_α p_jα(t)`.
pub fn combine_norms(ensemble: &Ensemble) -> NormSeries {
    let reference = ensemble.reference();
    let channels = reference.channels();
    let values = (0..reference.len())
        .map(|i| {
            let mut row = vec![0.0; channels];
            for c in ensemble.components() {
                for (acc, v) in row.iter_mut().zip(&c.series.values()[i]) {
                    *acc += c.weight * v;
                }
            }
            row
        })
        .collect();
    NormSeries::new(reference.times().to_vec(), values).expect("reference grid is valid")
}

/// Weighted sum of per-component variances, channel by channel.
pub fn combine_variances(weights: &[f64], variances: &[Vec<f64>]) -> Vec<f64> {
    let channels = variances.first().map_or(0, Vec::len);
    (0..channels).map(|j| weights.iter().zip(variances).map(|(w, v)| w * v[j]).sum()).collect()
}

/// Number of samples spanned by `dt`.
fn window_for(series: &NormSeries, dt: f64) -> Result<usize, MixtureError> {
    let sample_dt = series.sample_dt()?;
    let ratio = dt / sample_dt;
    let window = ratio.round();
    if !(window >= 1.0) || (ratio - window).abs() > 1e-6 * window {
        return Err(MixtureError::BadInterval { dt, sample_dt });
    }
    Ok(window as usize)
}

/// Per-component increment variances over `dt`, in component order.
pub fn component_variances(ensemble: &Ensemble, dt: f64) -> Result<Vec<Vec<f64>>, MixtureError> {
    let window = window_for(ensemble.reference(), dt)?;
    ensemble
        .components()
        .iter()
        .map(|c| Ok(increment_second_moments(&c.series, window)?.0))
        .collect()
}

/// Combined fluctuation variance `(Δδp_j)²` over an interval `dt`, which must
/// be a whole number of samples.
pub fn combine_fluctuation_variance(ensemble: &Ensemble, dt: f64) -> Result<Vec<f64>, MixtureError> {
    let variances = component_variances(ensemble, dt)?;
    Ok(combine_variances(&ensemble.weights(), &variances))
}

/// Constant two-channel model whose increments over `dt` have the given
/// variance, `A₁₂ = var/dt`.
pub fn equivalent_pair_model(combined_variance: &[f64], dt: f64) -> Result<CorrelationModel, MixtureError> {
    if combined_variance.len() != 2 {
        return Err(MixtureError::NotTwoChannels(combined_variance.len()));
    }
    let a = combined_variance[0] / dt;
    Ok(CorrelationModel::constant(PairMatrix::new(vec![vec![0.0, a], vec![a, 0.0]])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(p1: f64, len: usize) -> NormSeries {
        let times = (0..len).map(|i| i as f64 * 0.1).collect();
        NormSeries::new(times, vec![vec![p1, 1.0 - p1]; len]).unwrap()
    }

    fn ensemble(parts: &[(f64, NormSeries)]) -> Ensemble {
        Ensemble::new(parts.iter().map(|(w, s)| Component { weight: *w, series: s.clone() }).collect()).unwrap()
    }

    #[test]
    fn single_component_is_identity() {
        let s = constant(0.3, 20);
        assert_eq!(combine_norms(&ensemble(&[(1.0, s.clone())])), s);
    }

    #[test]
    fn convex_combinations() {
        let e = ensemble(&[(0.5, constant(0.2, 20)), (0.5, constant(0.6, 20))]);
        assert!(combine_norms(&e).values().iter().all(|v| (v[0] - 0.4).abs() < 1e-15));
        let e = ensemble(&[(0.25, constant(0.0, 20)), (0.75, constant(1.0, 20))]);
        let c = combine_norms(&e);
        assert!(c.values().iter().all(|v| v[0] == 0.75 && (v[0] + v[1] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn worked_variance_value() {
        let v = combine_variances(&[0.25, 0.75], &[vec![4e-4, 4e-4], vec![0.0, 0.0]]);
        assert_eq!(v, vec![1e-4, 1e-4]);
    }

    #[test]
    fn validation_errors() {
        let a = Component { weight: 0.5, series: constant(0.3, 20) };
        let b = Component { weight: 0.6, series: constant(0.3, 20) };
        assert!(matches!(Ensemble::new(vec![a.clone(), b]), Err(MixtureError::WeightsNotNormalized(_))));
        let c = Component { weight: 0.5, series: constant(0.3, 21) };
        assert!(matches!(Ensemble::new(vec![a.clone(), c]), Err(MixtureError::MismatchedGrids(1))));
        let d = Component { weight: -0.5, series: constant(0.3, 20) };
        assert!(matches!(Ensemble::new(vec![d]), Err(MixtureError::InvalidWeight { .. })));
        assert!(matches!(Ensemble::new(vec![]), Err(MixtureError::Empty)));
    }

    #[test]
    fn interval_must_be_whole_samples() {
        let e = ensemble(&[(1.0, constant(0.3, 200))]);
        assert!(matches!(combine_fluctuation_variance(&e, 0.15), Err(MixtureError::BadInterval { .. })));
        assert_eq!(combine_fluctuation_variance(&e, 0.2).unwrap(), vec![0.0, 0.0]);
    }
}
