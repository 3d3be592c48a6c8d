//! Martingale diffusion of squared norms on the probability simplex.
//!
//! The state is a vector `p` of channel squared norms with `Σ p_j = 1`. Each
//! step draws, for every active unordered pair `(j, k)`, an exchange
//! `δ ~ N(0, A_jk(p, t)·dt)` and applies `p_j += δ`, `p_k -= δ`. This gives
//! zero-mean increments with `⟨δp_j δp_k⟩ = -A_jk·dt` for `j ≠ k` and
//! `⟨δp_j²⟩ = Σ_k A_jk·dt`, while the sum is conserved pair by pair.
//!
//! A channel that reaches zero is absorbed: its value is pinned to exactly
//! `0.0` and it takes no further part in any exchange. The run ends when only
//! one channel is left, which then holds exactly `1.0`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;
use crate::series::NormSeries;

/// Tolerance on `|Σ p − 1|` accepted when validating user input.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("norm vector is empty")]
    Empty,
    #[error("entry {index} is not finite ({value})")]
    NonFiniteEntry { index: usize, value: f64 },
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("coefficient matrix: {0}")]
    InvalidModel(String),
    #[error("model has {model} channels but the state has {state}")]
    ChannelMismatch { model: usize, state: usize },
    #[error("model produced a non-finite or negative coefficient A[{j}][{k}] = {value} at t = {t}")]
    NonFiniteIncrement { j: usize, k: usize, value: f64, t: f64 },
    #[error("invalid step parameter: {0}")]
    InvalidParameter(String),
}

/// Channel squared norms together with the absorption mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormVector {
    values: Vec<f64>,
    active: Vec<bool>,
}

impl NormVector {
    /// Validates a point of the simplex. Channels that start at exactly zero
    /// are inactive from the outset.
    pub fn new(values: Vec<f64>) -> Result<Self, SimplexError> {
        if values.is_empty() {
            return Err(SimplexError::Empty);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(SimplexError::NonFiniteEntry { index, value });
            }
            if value < 0.0 {
                return Err(SimplexError::NegativeEntry { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(SimplexError::NotNormalized { sum });
        }
        let active = values.iter().map(|&v| v > 0.0).collect();
        Ok(Self { values, active })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// The surviving channel, if the state is a vertex.
    pub fn vertex(&self) -> Option<usize> {
        if self.n_active() != 1 {
            return None;
        }
        let j = self.active.iter().position(|&a| a)?;
        let exact = self
            .values
            .iter()
            .enumerate()
            .all(|(i, &v)| if i == j { v == 1.0 } else { v == 0.0 });
        exact.then_some(j)
    }

    fn deactivate(&mut self, j: usize) {
        self.values[j] = 0.0;
        self.active[j] = false;
    }

    fn settle_vertex(&mut self) {
        if let Some(j) = self.active.iter().position(|&a| a) {
            if self.n_active() == 1 {
                for (i, v) in self.values.iter_mut().enumerate() {
                    *v = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

/// Symmetric, non-negative pair coefficients with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PairMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl PairMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, SimplexError> {
        let n = rows.len();
        if n == 0 {
            return Err(SimplexError::InvalidModel("matrix is empty".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SimplexError::InvalidModel(format!(
                    "row {j} has {} entries, expected {n}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        let m = Self { n, entries };
        for j in 0..n {
            if m.get(j, j) != 0.0 {
                return Err(SimplexError::InvalidModel(format!("diagonal entry {j} is nonzero")));
            }
            for k in 0..n {
                let a = m.get(j, k);
                if !a.is_finite() || a < 0.0 {
                    return Err(SimplexError::InvalidModel(format!(
                        "entry ({j}, {k}) = {a} is not a finite non-negative number"
                    )));
                }
                if a != m.get(k, j) {
                    return Err(SimplexError::InvalidModel(format!(
                        "entries ({j}, {k}) and ({k}, {j}) differ"
                    )));
                }
            }
        }
        Ok(m)
    }

    /// Every off-diagonal entry equal to `a`.
    pub fn uniform(n: usize, a: f64) -> Result<Self, SimplexError> {
        let rows = (0..n)
            .map(|j| (0..n).map(|k| if j == k { 0.0 } else { a }).collect())
            .collect();
        Self::new(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.n + k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PairMatrix {
    type Error = SimplexError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<PairMatrix> for Vec<Vec<f64>> {
    fn from(m: PairMatrix) -> Self {
        m.rows()
    }
}

/// The fluctuation correlations `A_jk(p, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorrelationModel {
    /// `A_jk = a_jk`.
    Constant { coefficients: PairMatrix },
    /// `A_jk = g·p_j·p_k`, which vanishes on the boundary of the simplex.
    Bilinear { channels: usize, gain: f64 },
    /// `A_jk = a_jk·min(t / ramp, 1)`.
    TimeRamp { coefficients: PairMatrix, ramp: f64 },
}

impl CorrelationModel {
    pub fn constant(coefficients: PairMatrix) -> Self {
        Self::Constant { coefficients }
    }

    /// All pairs share the same constant coefficient.
    pub fn uniform(n: usize, a: f64) -> Result<Self, SimplexError> {
        Ok(Self::Constant { coefficients: PairMatrix::uniform(n, a)? })
    }

    pub fn bilinear(channels: usize, gain: f64) -> Result<Self, SimplexError> {
        let m = Self::Bilinear { channels, gain };
        m.validate()?;
        Ok(m)
    }

    pub fn time_ramp(coefficients: PairMatrix, ramp: f64) -> Result<Self, SimplexError> {
        let m = Self::TimeRamp { coefficients, ramp };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SimplexError> {
        match self {
            Self::Constant { .. } => Ok(()),
            Self::Bilinear { channels, gain } => {
                if *channels == 0 {
                    Err(SimplexError::InvalidModel("bilinear model needs at least one channel".into()))
                } else if !gain.is_finite() || *gain < 0.0 {
                    Err(SimplexError::InvalidModel(format!("bilinear gain {gain} must be finite and >= 0")))
                } else {
                    Ok(())
                }
            }
            Self::TimeRamp { ramp, .. } => {
                if ramp.is_finite() && *ramp > 0.0 {
                    Ok(())
                } else {
                    Err(SimplexError::InvalidModel(format!("ramp duration {ramp} must be finite and > 0")))
                }
            }
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Self::Constant { coefficients } | Self::TimeRamp { coefficients, .. } => coefficients.n(),
            Self::Bilinear { channels, .. } => *channels,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::Bilinear { .. } => "bilinear",
            Self::TimeRamp { .. } => "time-ramp",
        }
    }

    /// Evaluates `A_jk(p, t)`.
    #[inline]
    pub fn coefficient(&self, j: usize, k: usize, p: &[f64], t: f64) -> f64 {
        if j == k {
            return 0.0;
        }
        match self {
            Self::Constant { coefficients } => coefficients.get(j, k),
            Self::Bilinear { gain, .. } => gain * p[j] * p[k],
            Self::TimeRamp { coefficients, ramp } => coefficients.get(j, k) * (t / ramp).clamp(0.0, 1.0),
        }
    }

    /// `Σ_k A_jk`, the variance rate of channel `j`.
    pub fn variance_rate(&self, j: usize, p: &[f64], t: f64) -> f64 {
        (0..self.channels()).map(|k| self.coefficient(j, k, p, t)).sum()
    }
}

/// Sub-stepping controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// A step is halved while `sqrt(A_jk·dt) > theta·min(p_j, p_k)` for some pair.
    pub theta: f64,
    /// Maximum number of halvings of the outer step.
    pub max_depth: u32,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { theta: 0.1, max_depth: 16 }
    }
}

/// Advances states by one outer step, reusing a coefficient buffer.
struct Stepper<'a> {
    model: &'a CorrelationModel,
    config: StepConfig,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a CorrelationModel, config: StepConfig) -> Self {
        let n = model.channels();
        Self { model, config, scratch: vec![0.0; n * n] }
    }

    fn advance<R: Rng + ?Sized>(
        &mut self,
        state: &mut NormVector,
        t: f64,
        dt: f64,
        depth: u32,
        rng: &mut R,
        events: &mut Vec<(usize, f64)>,
    ) -> Result<(), SimplexError> {
        if state.n_active() <= 1 {
            return Ok(());
        }
        let n = state.len();
        let mut split = false;
        for j in 0..n {
            if !state.active[j] {
                continue;
            }
            for k in (j + 1)..n {
                if !state.active[k] {
                    continue;
                }
                let a = self.model.coefficient(j, k, &state.values, t);
                if !a.is_finite() || a < 0.0 {
                    return Err(SimplexError::NonFiniteIncrement { j, k, value: a, t });
                }
                self.scratch[j * n + k] = a;
                if (a * dt).sqrt() > self.config.theta * state.values[j].min(state.values[k]) {
                    split = true;
                }
            }
        }
        if split && depth < self.config.max_depth {
            let half = 0.5 * dt;
            self.advance(state, t, half, depth + 1, rng, events)?;
            return self.advance(state, t + half, half, depth + 1, rng, events);
        }

        let t_end = t + dt;
        for j in 0..n {
            for k in (j + 1)..n {
                if !(state.active[j] && state.active[k]) {
                    continue;
                }
                let a = self.scratch[j * n + k];
                if a == 0.0 {
                    continue;
                }
                let z: f64 = rng.sample(StandardNormal);
                let delta = (a * dt).sqrt() * z;
                let (pj, pk) = (state.values[j], state.values[k]);
                if pj + delta <= 0.0 {
                    state.values[k] = pk + pj;
                    state.deactivate(j);
                    events.push((j, t_end));
                } else if pk - delta <= 0.0 {
                    state.values[j] = pj + pk;
                    state.deactivate(k);
                    events.push((k, t_end));
                } else {
                    state.values[j] = pj + delta;
                    state.values[k] = pk - delta;
                }
            }
        }
        state.settle_vertex();
        Ok(())
    }
}

fn check_inputs(state: &NormVector, model: &CorrelationModel, dt: f64) -> Result<(), SimplexError> {
    model.validate()?;
    if model.channels() != state.len() {
        return Err(SimplexError::ChannelMismatch { model: model.channels(), state: state.len() });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimplexError::InvalidParameter(format!("dt = {dt} must be > 0")));
    }
    Ok(())
}

/// One outer step of length `dt` starting at time `t`.
pub fn step<R: Rng + ?Sized>(
    state: &NormVector,
    model: &CorrelationModel,
    t: f64,
    dt: f64,
    rng: &mut R,
    config: StepConfig,
) -> Result<NormVector, SimplexError> {
    check_inputs(state, model, dt)?;
    let mut next = state.clone();
    let mut events = Vec::new();
    Stepper::new(model, config).advance(&mut next, t, dt, 0, rng, &mut events)?;
    Ok(next)
}

/// Outcome of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorptionRecord {
    /// Surviving channel (0-based); `None` when the run timed out.
    pub winner: Option<usize>,
    /// Time of the last absorption, or `t_max` on timeout.
    pub hitting_time: f64,
    /// Outer steps taken.
    pub steps: u64,
    /// `(channel, time)` of each zero hit, in order. Channels that start at
    /// zero are listed first with time 0.
    pub absorption_order: Vec<(usize, f64)>,
    pub terminal: NormVector,
}

impl AbsorptionRecord {
    pub fn timed_out(&self) -> bool {
        self.winner.is_none()
    }
}

/// Runs until one channel remains, calling `observer(t, state)` at the start
/// and after each outer step.
pub fn run_trajectory_observed<R, F>(
    p0: &NormVector,
    model: &CorrelationModel,
    dt: f64,
    t_max: f64,
    rng: &mut R,
    config: StepConfig,
    mut observer: F,
) -> Result<AbsorptionRecord, SimplexError>
where
    R: Rng + ?Sized,
    F: FnMut(f64, &NormVector),
{
    check_inputs(p0, model, dt)?;
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(SimplexError::InvalidParameter(format!("t_max = {t_max} must be > 0")));
    }
    let mut state = p0.clone();
    let mut events: Vec<(usize, f64)> =
        state.active.iter().enumerate().filter(|(_, &a)| !a).map(|(j, _)| (j, 0.0)).collect();
    state.settle_vertex();
    let mut stepper = Stepper::new(model, config);
    let mut steps = 0u64;
    let mut t = 0.0;
    observer(t, &state);
    while state.n_active() > 1 {
        if t >= t_max {
            return Ok(AbsorptionRecord {
                winner: None,
                hitting_time: t_max,
                steps,
                absorption_order: events,
                terminal: state,
            });
        }
        stepper.advance(&mut state, t, dt, 0, rng, &mut events)?;
        steps += 1;
        t = steps as f64 * dt;
        observer(t, &state);
    }
    let winner = state.active.iter().position(|&a| a);
    let hitting_time = events.last().map_or(0.0, |&(_, time)| time);
    Ok(AbsorptionRecord { winner, hitting_time, steps, absorption_order: events, terminal: state })
}

pub fn run_trajectory<R: Rng + ?Sized>(
    p0: &NormVector,
    model: &CorrelationModel,
    dt: f64,
    t_max: f64,
    rng: &mut R,
    config: StepConfig,
) -> Result<AbsorptionRecord, SimplexError> {
    run_trajectory_observed(p0, model, dt, t_max, rng, config, |_, _| {})
}

/// Fixed-length path of `n_steps` outer steps, sampled after every step. A
/// path that absorbs early stays on its vertex for the remaining samples.
pub fn sample_path<R: Rng + ?Sized>(
    p0: &NormVector,
    model: &CorrelationModel,
    dt: f64,
    n_steps: usize,
    rng: &mut R,
    config: StepConfig,
) -> Result<NormSeries, SimplexError> {
    check_inputs(p0, model, dt)?;
    let mut state = p0.clone();
    state.settle_vertex();
    let mut stepper = Stepper::new(model, config);
    let mut events = Vec::new();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    values.push(state.values.clone());
    for i in 1..=n_steps {
        stepper.advance(&mut state, (i - 1) as f64 * dt, dt, 0, rng, &mut events)?;
        times.push(i as f64 * dt);
        values.push(state.values.clone());
    }
    NormSeries::new(times, values).map_err(|e| SimplexError::InvalidParameter(e.to_string()))
}

/// Parameters for an ensemble of independent trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub n: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub step: StepConfig,
}

/// Runs `n` trajectories on sub-streams `(seed, i)`, in parallel on the
/// current rayon pool. The result is ordered by trajectory index.
pub fn run_ensemble_records(
    p0: &NormVector,
    model: &CorrelationModel,
    config: &EnsembleConfig,
) -> Result<Vec<AbsorptionRecord>, SimplexError> {
    if config.n == 0 {
        return Err(SimplexError::InvalidParameter("ensemble size must be >= 1".into()));
    }
    (0..config.n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, i);
            run_trajectory(p0, model, config.dt, config.t_max, &mut rng, config.step)
        })
        .collect()
}

pub fn run_ensemble(
    p0: &NormVector,
    model: &CorrelationModel,
    config: &EnsembleConfig,
) -> Result<BornReport, SimplexError> {
    let records = run_ensemble_records(p0, model, config)?;
    Ok(BornReport::from_records(p0.len(), &records))
}

/// Winner frequencies and hitting-time statistics of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BornReport {
    pub n_trajectories: usize,
    pub n_timeouts: usize,
    pub frequencies: Vec<f64>,
    /// `sqrt(f(1 − f)/n)` over completed trajectories.
    pub standard_errors: Vec<f64>,
    pub mean_hitting_time: f64,
    pub hitting_time_stddev: f64,
}

impl BornReport {
    pub fn from_records(channels: usize, records: &[AbsorptionRecord]) -> Self {
        let mut wins = vec![0usize; channels];
        let mut times = Vec::with_capacity(records.len());
        for r in records {
            if let Some(w) = r.winner {
                wins[w] += 1;
                times.push(r.hitting_time);
            }
        }
        let completed = times.len();
        let n = completed.max(1) as f64;
        let frequencies: Vec<f64> = wins.iter().map(|&w| w as f64 / n).collect();
        let standard_errors = frequencies.iter().map(|&f| (f * (1.0 - f) / n).sqrt()).collect();
        let mean = times.iter().sum::<f64>() / n;
        let var = if completed > 1 {
            times.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (completed - 1) as f64
        } else {
            0.0
        };
        Self {
            n_trajectories: records.len(),
            n_timeouts: records.len() - completed,
            frequencies,
            standard_errors,
            mean_hitting_time: mean,
            hitting_time_stddev: var.sqrt(),
        }
    }

    pub fn n_completed(&self) -> usize {
        self.n_trajectories - self.n_timeouts
    }

    /// Standard error of the mean hitting time.
    pub fn hitting_time_standard_error(&self) -> f64 {
        self.hitting_time_stddev / (self.n_completed().max(1) as f64).sqrt()
    }

    /// `|f_j − expected_j| / se_j` per channel, using the binomial error of
    /// the expected value so that a zero-variance cell is well defined.
    pub fn z_scores(&self, expected: &[f64]) -> Vec<f64> {
        let n = self.n_completed().max(1) as f64;
        self.frequencies
            .iter()
            .zip(expected)
            .map(|(&f, &e)| {
                let se = (e * (1.0 - e) / n).sqrt();
                if se == 0.0 {
                    if f == e { 0.0 } else { f64::INFINITY }
                } else {
                    (f - e).abs() / se
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn nv(v: &[f64]) -> NormVector {
        NormVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        let p = nv(&[0.3, 0.7]);
        assert_eq!(p.active_mask(), &[true, true]);
        let p = nv(&[1.0, 0.0]);
        assert_eq!(p.active_mask(), &[true, false]);
        assert_eq!(p.vertex(), Some(0));
        assert!(matches!(NormVector::new(vec![0.5, 0.6]), Err(SimplexError::NotNormalized { .. })));
        assert!(matches!(NormVector::new(vec![-0.1, 1.1]), Err(SimplexError::NegativeEntry { index: 0, .. })));
        assert!(matches!(NormVector::new(vec![]), Err(SimplexError::Empty)));
        assert!(matches!(NormVector::new(vec![f64::NAN, 1.0]), Err(SimplexError::NonFiniteEntry { .. })));
    }

    #[test]
    fn pair_matrix_rejects_bad_input() {
        assert!(PairMatrix::new(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(PairMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(PairMatrix::new(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        assert!(PairMatrix::new(vec![vec![0.0, 1.0]]).is_err());
        assert!(PairMatrix::uniform(3, 0.5).is_ok());
    }

    #[test]
    fn zero_diffusion_leaves_state_unchanged() {
        let model = CorrelationModel::uniform(3, 0.0).unwrap();
        let p = nv(&[0.2, 0.3, 0.5]);
        let mut rng = stream_rng(1, 0);
        let q = step(&p, &model, 0.0, 0.1, &mut rng, StepConfig::default()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn inactive_channel_stays_frozen() {
        let model = CorrelationModel::uniform(2, 5.0).unwrap();
        let p = nv(&[0.0, 1.0]);
        let mut rng = stream_rng(1, 0);
        let q = step(&p, &model, 0.0, 0.1, &mut rng, StepConfig::default()).unwrap();
        assert_eq!(q.values(), &[0.0, 1.0]);
        assert_eq!(q.active_mask(), &[false, true]);
    }

    #[test]
    fn increment_variance_matches_normal_construction() {
        // No sub-stepping triggers here: sqrt(1e-4) = 0.01 < 0.1 * 0.5.
        let model = CorrelationModel::uniform(2, 1.0).unwrap();
        let p = nv(&[0.5, 0.5]);
        let mut rng = stream_rng(9, 0);
        let m = 100_000;
        let mut sum2 = 0.0;
        for _ in 0..m {
            let q = step(&p, &model, 0.0, 1e-4, &mut rng, StepConfig::default()).unwrap();
            let d = q.values()[0] - 0.5;
            sum2 += d * d;
        }
        let var = sum2 / m as f64;
        assert!((var - 1e-4).abs() < 0.05 * 1e-4, "var = {var}");
    }

    #[test]
    fn vertex_start_is_immediate() {
        let model = CorrelationModel::uniform(2, 1.0).unwrap();
        let mut rng = stream_rng(0, 0);
        let r = run_trajectory(&nv(&[1.0, 0.0]), &model, 1e-3, 1.0, &mut rng, StepConfig::default()).unwrap();
        assert_eq!(r.winner, Some(0));
        assert_eq!(r.hitting_time, 0.0);
        assert_eq!(r.steps, 0);
        assert_eq!(r.absorption_order, vec![(1, 0.0)]);
    }

    #[test]
    fn trajectory_ends_on_vertex_with_ordered_absorptions() {
        let model = CorrelationModel::uniform(4, 1.0).unwrap();
        let p0 = nv(&[0.1, 0.2, 0.3, 0.4]);
        for i in 0..200 {
            let mut rng = stream_rng(3, i);
            let r = run_trajectory(&p0, &model, 1e-3, 100.0, &mut rng, StepConfig::default()).unwrap();
            let w = r.winner.unwrap();
            assert_eq!(r.terminal.vertex(), Some(w));
            assert_eq!(r.absorption_order.len(), 3);
            assert!(r.absorption_order.windows(2).all(|e| e[0].1 <= e[1].1));
            assert!(r.absorption_order.iter().all(|&(c, _)| c != w));
        }
    }

    #[test]
    fn timeout_is_flagged() {
        let model = CorrelationModel::uniform(2, 1e-6).unwrap();
        let mut rng = stream_rng(0, 0);
        let r = run_trajectory(&nv(&[0.5, 0.5]), &model, 1e-2, 0.1, &mut rng, StepConfig::default()).unwrap();
        assert!(r.timed_out());
        let report = BornReport::from_records(2, &[r]);
        assert_eq!(report.n_timeouts, 1);
    }

    #[test]
    fn bilinear_vanishes_on_boundary_and_ramp_grows() {
        let m = CorrelationModel::bilinear(2, 3.0).unwrap();
        assert_eq!(m.coefficient(0, 1, &[0.0, 1.0], 0.0), 0.0);
        assert!((m.coefficient(0, 1, &[0.5, 0.5], 0.0) - 0.75).abs() < 1e-15);
        let r = CorrelationModel::time_ramp(PairMatrix::uniform(2, 2.0).unwrap(), 4.0).unwrap();
        assert_eq!(r.coefficient(0, 1, &[0.5, 0.5], 1.0), 0.5);
        assert_eq!(r.coefficient(0, 1, &[0.5, 0.5], 10.0), 2.0);
        assert!(CorrelationModel::bilinear(2, -1.0).is_err());
    }

    #[test]
    fn model_channel_mismatch() {
        let model = CorrelationModel::uniform(3, 1.0).unwrap();
        let mut rng = stream_rng(0, 0);
        assert!(matches!(
            step(&nv(&[0.5, 0.5]), &model, 0.0, 0.1, &mut rng, StepConfig::default()),
            Err(SimplexError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn vertex_start_ensemble() {
        let model = CorrelationModel::uniform(2, 1.0).unwrap();
        let cfg = EnsembleConfig { n: 50, dt: 1e-3, t_max: 10.0, seed: 1, step: StepConfig::default() };
        let report = run_ensemble(&nv(&[0.0, 1.0]), &model, &cfg).unwrap();
        assert_eq!(report.frequencies, vec![0.0, 1.0]);
    }
}
