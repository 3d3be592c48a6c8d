//! Time series of channel squared norms and the windowed fluctuation
//! estimator shared by the quantum bridge and the mixture ensemble.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("series has {len} samples, needs at least {needed} for window {window}")]
    SeriesTooShort { len: usize, needed: usize, window: usize },
    #[error("window must be >= 1")]
    ZeroWindow,
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("sample {index} has {found} channels, expected {expected}")]
    ChannelMismatch { index: usize, found: usize, expected: usize },
    #[error("sample times are not uniformly spaced")]
    NonUniformTimes,
    #[error("series is empty")]
    Empty,
}

/// `values[i][j]` is `p_j` at `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormSeries {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl NormSeries {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, SeriesError> {
        if times.len() != values.len() {
            return Err(SeriesError::LengthMismatch { times: times.len(), values: values.len() });
        }
        let expected = values.first().ok_or(SeriesError::Empty)?.len();
        for (index, v) in values.iter().enumerate() {
            if v.len() != expected {
                return Err(SeriesError::ChannelMismatch { index, found: v.len(), expected });
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SeriesError::NonUniformTimes);
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    /// Channel `j` as its own vector.
    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[j]).collect()
    }

    /// The common sample spacing.
    pub fn sample_dt(&self) -> Result<f64, SeriesError> {
        if self.len() < 2 {
            return Err(SeriesError::SeriesTooShort { len: self.len(), needed: 2, window: 1 });
        }
        let dt = (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64;
        let uniform = self.times.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1e-300));
        if uniform { Ok(dt) } else { Err(SeriesError::NonUniformTimes) }
    }

    /// Samples in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self, SeriesError> {
        Self::new(self.times[range.clone()].to_vec(), self.values[range].to_vec())
    }

    /// Non-overlapping increments `p(t + w·Δt) − p(t)` and their span `w·Δt`.
    pub fn windowed_increments(&self, window: usize) -> Result<(Vec<Vec<f64>>, f64), SeriesError> {
        if window == 0 {
            return Err(SeriesError::ZeroWindow);
        }
        let needed = 10 * window;
        if self.len() < needed {
            return Err(SeriesError::SeriesTooShort { len: self.len(), needed, window });
        }
        let dt = self.sample_dt()? * window as f64;
        let increments = (0..(self.len() - 1) / window)
            .map(|m| {
                let (a, b) = (&self.values[m * window], &self.values[(m + 1) * window]);
                b.iter().zip(a).map(|(y, x)| y - x).collect()
            })
            .collect();
        Ok((increments, dt))
    }
}

/// Mean of `samples` and its delete-one jackknife standard error.
pub fn jackknife_mean(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let total: f64 = samples.iter().sum();
    let mean = total / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let loo = samples.iter().map(|x| (total - x) / (n - 1) as f64);
    let var = loo.map(|m| (m - mean) * (m - mean)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (mean, var.sqrt())
}

/// Estimated fluctuation correlations `Â_jk = −⟨δp_j δp_k⟩/δt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    /// Off-diagonal estimates; the diagonal holds `⟨δp_j²⟩/δt`.
    pub a: Vec<Vec<f64>>,
    pub standard_error: Vec<Vec<f64>>,
    pub increment_dt: f64,
    pub n_increments: usize,
}

impl CorrelationEstimate {
    /// `|Â_jk| / se_jk`.
    pub fn significance(&self, j: usize, k: usize) -> f64 {
        self.a[j][k] / self.standard_error[j][k]
    }
}

/// Correlation estimate from increments over `window` samples.
pub fn estimate_correlations(series: &NormSeries, window: usize) -> Result<CorrelationEstimate, SeriesError> {
    let (inc, dt) = series.windowed_increments(window)?;
    let n = series.channels();
    let mut a = vec![vec![0.0; n]; n];
    let mut se = vec![vec![0.0; n]; n];
    let mut products = Vec::with_capacity(inc.len());
    for j in 0..n {
        for k in j..n {
            products.clear();
            products.extend(inc.iter().map(|d| d[j] * d[k]));
            let (mean, err) = jackknife_mean(&products);
            let sign = if j == k { 1.0 } else { -1.0 };
            // `+ 0.0` turns a negated zero into a plain zero.
            let value = sign * mean / dt + 0.0;
            a[j][k] = value;
            a[k][j] = value;
            se[j][k] = err / dt;
            se[k][j] = err / dt;
        }
    }
    Ok(CorrelationEstimate { a, standard_error: se, increment_dt: dt, n_increments: inc.len() })
}

/// `⟨δp_j²⟩` per channel over increments of `window` samples.
pub fn increment_second_moments(series: &NormSeries, window: usize) -> Result<(Vec<f64>, f64), SeriesError> {
    let (inc, dt) = series.windowed_increments(window)?;
    let m = inc.len() as f64;
    let moments = (0..series.channels()).map(|j| inc.iter().map(|d| d[j] * d[j]).sum::<f64>() / m).collect();
    Ok((moments, dt))
}
