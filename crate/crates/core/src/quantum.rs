//! Two track states coupled to one collective pattern coordinate.
//!
//! The Hamiltonian is `H = P²/2M + V(X) + W` with `W = λ(x, t)·σ` acting on
//! the two-dimensional track space. The wavefunction `φ₁|1⟩ + φ₂|2⟩` lives on
//! a periodic grid and is advanced with the symmetric split-step Fourier
//! method: half a step of `V + W` (an exact 2×2 exponential at each grid
//! point), a full kinetic step in momentum space, and another half step of
//! `V + W`. Every factor is unitary, so the total norm is conserved to
//! rounding.
//!
//! The amplitude/phase split `φ_j = A_j·exp(iS_j/ħ)` is never integrated
//! directly. [`wkb_diagnostic`] evaluates both sides of the Hamilton-Jacobi
//! and transport balances from the exact wavefunction instead.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::NormSeries;

/// Total norm drift that aborts an evolution.
pub const NORM_DRIFT_LIMIT: f64 = 1e-8;
/// Edge amplitude above which a run is flagged as touching the boundary.
pub const EDGE_AMPLITUDE_LIMIT: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("|c1|² + |c2|² = {0}, expected 1")]
    UnnormalizedCoefficients(f64),
    #[error("packet width {width} is below 4·dx = {min}")]
    UnresolvablePacket { width: f64, min: f64 },
    #[error("coupling or potential is not finite at x = {x}, t = {t}")]
    NonFiniteField { x: f64, t: f64 },
    #[error("total norm drifted by {drift:e} at t = {t}")]
    NormDriftExceeded { drift: f64, t: f64 },
    #[error("invalid evolution parameter: {0}")]
    InvalidParameter(String),
    #[error("no grid point has amplitude above the threshold {0}")]
    EmptyMask(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
}

fn one() -> f64 {
    1.0
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self, QuantumError> {
        let g = Self { x_min, x_max, n_points, mass: 1.0, hbar: 1.0 };
        g.validate()?;
        Ok(g)
    }

    pub fn with_hbar(mut self, hbar: f64) -> Result<Self, QuantumError> {
        self.hbar = hbar;
        self.validate()?;
        Ok(self)
    }

    pub fn with_mass(mut self, mass: f64) -> Result<Self, QuantumError> {
        self.mass = mass;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(QuantumError::InvalidGrid(format!("need x_max > x_min, got [{}, {}]", self.x_min, self.x_max)));
        }
        if self.n_points < 256 || !self.n_points.is_power_of_two() {
            return Err(QuantumError::InvalidGrid(format!("n_points = {} must be a power of two >= 256", self.n_points)));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(QuantumError::InvalidGrid(format!("mass = {} must be > 0", self.mass)));
        }
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(QuantumError::InvalidGrid(format!("hbar = {} must be > 0", self.hbar)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_points as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / (self.x_max - self.x_min);
        (0..n).map(|m| if m < n / 2 { m as f64 * dk } else { (m as f64 - n as f64) * dk }).collect()
    }
}

/// Track-independent potential `V(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    Flat,
    /// `½·M·ω²·x²`.
    Harmonic { omega: f64 },
}

impl Default for Potential {
    fn default() -> Self {
        Self::Harmonic { omega: 1.0 }
    }
}

impl Potential {
    pub fn eval(&self, x: f64, mass: f64) -> f64 {
        match *self {
            Self::Flat => 0.0,
            Self::Harmonic { omega } => 0.5 * mass * omega * omega * x * x,
        }
    }
}

/// One component of the coupling `λ(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Field {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `offset + slope·x`.
    Linear { offset: f64, slope: f64 },
    /// `value·min(t / ramp, 1)`.
    Ramped { value: f64, ramp: f64 },
}

impl Field {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value,
            Self::Linear { offset, slope } => offset + slope * x,
            Self::Ramped { value, ramp } => value * (t / ramp).clamp(0.0, 1.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Constant { value } | Self::Ramped { value, .. } => value == 0.0,
            Self::Linear { offset, slope } => offset == 0.0 && slope == 0.0,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        !matches!(self, Self::Ramped { .. })
    }
}

/// `V(x)` and the three coupling fields of `W = λ·σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default)]
    pub potential: Potential,
    #[serde(default)]
    pub lambda_x: Field,
    #[serde(default)]
    pub lambda_y: Field,
    #[serde(default)]
    pub lambda_z: Field,
}

impl CouplingSpec {
    /// Only `λ_z` couples: the patterns act as a pointer.
    pub fn is_pointer(&self) -> bool {
        self.lambda_x.is_zero() && self.lambda_y.is_zero()
    }

    pub fn is_time_independent(&self) -> bool {
        self.lambda_x.is_time_independent() && self.lambda_y.is_time_independent() && self.lambda_z.is_time_independent()
    }

    /// `(V, λ_x, λ_y, λ_z)` at `(x, t)`.
    pub fn eval(&self, x: f64, t: f64, mass: f64) -> [f64; 4] {
        [self.potential.eval(x, mass), self.lambda_x.eval(x, t), self.lambda_y.eval(x, t), self.lambda_z.eval(x, t)]
    }

    /// The 2×2 matrix `λ·σ` at `(x, t)`.
    pub fn coupling_matrix(&self, x: f64, t: f64) -> [[Complex64; 2]; 2] {
        let (lx, ly, lz) = (self.lambda_x.eval(x, t), self.lambda_y.eval(x, t), self.lambda_z.eval(x, t));
        [
            [Complex64::new(lz, 0.0), Complex64::new(lx, -ly)],
            [Complex64::new(lx, ly), Complex64::new(-lz, 0.0)],
        ]
    }

    fn check_finite(&self, grid: &GridSpec, t: f64) -> Result<(), QuantumError> {
        for x in grid.xs() {
            if self.eval(x, t, grid.mass).iter().any(|v| !v.is_finite()) {
                return Err(QuantumError::NonFiniteField { x, t });
            }
        }
        Ok(())
    }
}

/// Gaussian packet `φ(x) ∝ exp(−(x − center)²/(4·width²) + i·momentum·x/ħ)`;
/// `width` is the position standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPacket {
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoChannelState {
    pub phi1: Vec<Complex64>,
    pub phi2: Vec<Complex64>,
    pub t: f64,
}

fn norm_sq(phi: &[Complex64], dx: f64) -> f64 {
    phi.iter().map(Complex64::norm_sqr).sum::<f64>() * dx
}

impl TwoChannelState {
    /// Channel norms `(‖φ₁‖², ‖φ₂‖²)`.
    pub fn norms(&self, grid: &GridSpec) -> (f64, f64) {
        (norm_sq(&self.phi1, grid.dx()), norm_sq(&self.phi2, grid.dx()))
    }

    pub fn total_norm(&self, grid: &GridSpec) -> f64 {
        let (a, b) = self.norms(grid);
        a + b
    }

    /// Largest amplitude over the outermost four points at either end.
    pub fn edge_amplitude(&self) -> f64 {
        let n = self.phi1.len();
        let edge = |phi: &[Complex64]| {
            phi[..4].iter().chain(&phi[n - 4..]).map(|z| z.norm()).fold(0.0, f64::max)
        };
        edge(&self.phi1).max(edge(&self.phi2))
    }

    pub fn channel(&self, j: usize) -> &[Complex64] {
        if j == 0 { &self.phi1 } else { &self.phi2 }
    }

    /// CSV with columns `x,re_phi1,im_phi1,re_phi2,im_phi2`.
    pub fn write_csv<W: Write>(&self, grid: &GridSpec, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,re_phi1,im_phi1,re_phi2,im_phi2")?;
        for (i, (a, b)) in self.phi1.iter().zip(&self.phi2).enumerate() {
            writeln!(out, "{},{},{},{},{}", grid.x(i), a.re, a.im, b.re, b.im)?;
        }
        Ok(())
    }
}

/// `φ_j = c_j·φ` with `φ` a normalised Gaussian packet.
pub fn init_state(c1: Complex64, c2: Complex64, packet: GaussianPacket, grid: &GridSpec) -> Result<TwoChannelState, QuantumError> {
    grid.validate()?;
    let total = c1.norm_sqr() + c2.norm_sqr();
    if (total - 1.0).abs() > 1e-9 {
        return Err(QuantumError::UnnormalizedCoefficients(total));
    }
    let dx = grid.dx();
    if !(packet.width >= 4.0 * dx) {
        return Err(QuantumError::UnresolvablePacket { width: packet.width, min: 4.0 * dx });
    }
    let hbar = grid.hbar;
    let mut phi: Vec<Complex64> = grid
        .xs()
        .into_iter()
        .map(|x| {
            let u = x - packet.center;
            Complex64::from_polar((-u * u / (4.0 * packet.width * packet.width)).exp(), packet.momentum * x / hbar)
        })
        .collect();
    let norm = norm_sq(&phi, dx).sqrt();
    phi.iter_mut().for_each(|z| *z /= norm);
    Ok(TwoChannelState {
        phi1: phi.iter().map(|z| c1 * z).collect(),
        phi2: phi.iter().map(|z| c2 * z).collect(),
        t: 0.0,
    })
}

/// FFT-based spectral derivatives on the periodic grid.
struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl Spectral {
    fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(grid.n_points),
            inverse: planner.plan_fft_inverse(grid.n_points),
            k: grid.wavenumbers(),
        }
    }

    /// Multiplies the spectrum of `phi` by `factor(k)` in place.
    fn apply_in_k<F: Fn(f64) -> Complex64>(&self, phi: &mut [Complex64], factor: F) {
        self.forward.process(phi);
        let scale = 1.0 / phi.len() as f64;
        for (z, &k) in phi.iter_mut().zip(&self.k) {
            *z *= factor(k) * scale;
        }
        self.inverse.process(phi);
    }

    fn derivative(&self, phi: &[Complex64]) -> Vec<Complex64> {
        let mut out = phi.to_vec();
        self.apply_in_k(&mut out, |k| Complex64::new(0.0, k));
        out
    }

    fn second_derivative(&self, phi: &[Complex64]) -> Vec<Complex64> {
        let mut out = phi.to_vec();
        self.apply_in_k(&mut out, |k| Complex64::new(-k * k, 0.0));
        out
    }
}

/// Split-step propagator for a fixed grid, coupling and step.
pub struct Propagator {
    grid: GridSpec,
    spec: CouplingSpec,
    dt: f64,
    spectral: Spectral,
    kinetic: Vec<Complex64>,
    xs: Vec<f64>,
    static_kick: Option<Vec<[Complex64; 4]>>,
}

impl Propagator {
    pub fn new(grid: &GridSpec, spec: &CouplingSpec, dt: f64) -> Result<Self, QuantumError> {
        grid.validate()?;
        if !(dt.is_finite() && dt != 0.0) {
            return Err(QuantumError::InvalidParameter(format!("dt = {dt} must be finite and nonzero")));
        }
        spec.check_finite(grid, 0.0)?;
        let spectral = Spectral::new(grid);
        let (hbar, mass) = (grid.hbar, grid.mass);
        let kinetic = spectral.k.iter().map(|&k| Complex64::from_polar(1.0, -hbar * k * k * dt / (2.0 * mass))).collect();
        let xs = grid.xs();
        let mut p = Self { grid: *grid, spec: *spec, dt, spectral, kinetic, xs, static_kick: None };
        if spec.is_time_independent() {
            p.static_kick = Some(p.kick_matrices(0.0));
        }
        Ok(p)
    }

    /// `exp(−i(V + λ·σ)·(dt/2)/ħ)` at each grid point, evaluated at time `t`,
    /// stored row-major as `[u11, u12, u21, u22]`.
    fn kick_matrices(&self, t: f64) -> Vec<[Complex64; 4]> {
        let tau = 0.5 * self.dt / self.grid.hbar;
        self.xs
            .iter()
            .map(|&x| {
                let [v, lx, ly, lz] = self.spec.eval(x, t, self.grid.mass);
                let phase = Complex64::from_polar(1.0, -v * tau);
                let r = (lx * lx + ly * ly + lz * lz).sqrt();
                if r == 0.0 {
                    return [phase, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), phase];
                }
                let (s, c) = (r * tau).sin_cos();
                let (nx, ny, nz) = (lx / r, ly / r, lz / r);
                let i = Complex64::i();
                // c·I − i·s·(n·σ)
                let u11 = Complex64::new(c, 0.0) - i * s * nz;
                let u22 = Complex64::new(c, 0.0) + i * s * nz;
                let u12 = -i * s * Complex64::new(nx, -ny);
                let u21 = -i * s * Complex64::new(nx, ny);
                [phase * u11, phase * u12, phase * u21, phase * u22]
            })
            .collect()
    }

    fn kick(state: &mut TwoChannelState, u: &[[Complex64; 4]]) {
        for ((a, b), m) in state.phi1.iter_mut().zip(state.phi2.iter_mut()).zip(u) {
            let (x, y) = (*a, *b);
            *a = m[0] * x + m[1] * y;
            *b = m[2] * x + m[3] * y;
        }
    }

    pub fn step(&self, state: &mut TwoChannelState) {
        let owned;
        let u = match &self.static_kick {
            Some(u) => u,
            None => {
                owned = self.kick_matrices(state.t + 0.5 * self.dt);
                &owned
            }
        };
        Self::kick(state, u);
        for phi in [&mut state.phi1, &mut state.phi2] {
            self.spectral.forward.process(phi);
            let scale = 1.0 / phi.len() as f64;
            for (z, k) in phi.iter_mut().zip(&self.kinetic) {
                *z *= k * scale;
            }
            self.spectral.inverse.process(phi);
        }
        Self::kick(state, u);
        state.t += self.dt;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    /// Time step; negative values run backwards.
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "one_usize")]
    pub record_every: usize,
    /// Keep a full state every this many steps.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub total_norm: Vec<f64>,
    pub snapshots: Vec<TwoChannelState>,
    pub final_state: TwoChannelState,
    /// The packet reached the grid edges at some recorded time.
    pub edge_flagged: bool,
    pub max_norm_drift: f64,
}

impl Evolution {
    pub fn norm_series(&self) -> NormSeries {
        let values = self.p1.iter().zip(&self.p2).map(|(&a, &b)| vec![a, b]).collect();
        NormSeries::new(self.times.clone(), values).expect("recorded times increase")
    }

    /// Largest deviation of `p_j(t)` from its initial value over both channels.
    pub fn max_channel_drift(&self) -> f64 {
        let drift = |p: &[f64]| p.iter().map(|v| (v - p[0]).abs()).fold(0.0, f64::max);
        drift(&self.p1).max(drift(&self.p2))
    }

    /// CSV with columns `t,p1,p2,total_norm`.
    pub fn write_norm_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,p1,p2,total_norm")?;
        for i in 0..self.times.len() {
            writeln!(out, "{},{},{},{}", self.times[i], self.p1[i], self.p2[i], self.total_norm[i])?;
        }
        Ok(())
    }
}

/// Advances `state` by `n_steps` steps of `dt`, recording channel norms.
pub fn evolve(state: &TwoChannelState, spec: &CouplingSpec, grid: &GridSpec, config: &EvolveConfig) -> Result<Evolution, QuantumError> {
    if config.record_every == 0 {
        return Err(QuantumError::InvalidParameter("record_every must be >= 1".into()));
    }
    if state.phi1.len() != grid.n_points || state.phi2.len() != grid.n_points {
        return Err(QuantumError::InvalidParameter("state does not match the grid".into()));
    }
    let prop = Propagator::new(grid, spec, config.dt)?;
    if !spec.is_time_independent() {
        let t_end = state.t + config.dt * config.n_steps as f64;
        spec.check_finite(grid, t_end)?;
    }
    let mut current = state.clone();
    let initial = current.total_norm(grid);
    let mut ev = Evolution {
        times: Vec::new(),
        p1: Vec::new(),
        p2: Vec::new(),
        total_norm: Vec::new(),
        snapshots: Vec::new(),
        final_state: state.clone(),
        edge_flagged: false,
        max_norm_drift: 0.0,
    };
    let record = |ev: &mut Evolution, s: &TwoChannelState| -> Result<(), QuantumError> {
        let (a, b) = s.norms(grid);
        let drift = (a + b - initial).abs();
        ev.max_norm_drift = ev.max_norm_drift.max(drift);
        if drift > NORM_DRIFT_LIMIT {
            return Err(QuantumError::NormDriftExceeded { drift, t: s.t });
        }
        ev.edge_flagged |= s.edge_amplitude() > EDGE_AMPLITUDE_LIMIT;
        ev.times.push(s.t);
        ev.p1.push(a);
        ev.p2.push(b);
        ev.total_norm.push(a + b);
        Ok(())
    };
    record(&mut ev, &current)?;
    if config.snapshot_every.is_some() {
        ev.snapshots.push(current.clone());
    }
    for step in 1..=config.n_steps {
        prop.step(&mut current);
        current.t = state.t + step as f64 * config.dt;
        if step % config.record_every == 0 {
            record(&mut ev, &current)?;
        }
        if config.snapshot_every.is_some_and(|every| every > 0 && step % every == 0) {
            ev.snapshots.push(current.clone());
        }
    }
    if ev.edge_flagged {
        log::warn!("wave packet reached the grid edge; widen the domain");
    }
    ev.final_state = current;
    Ok(ev)
}

/// `(Hφ)_j` for both channels at the state's time.
pub fn apply_hamiltonian(state: &TwoChannelState, spec: &CouplingSpec, grid: &GridSpec) -> [Vec<Complex64>; 2] {
    let spectral = Spectral::new(grid);
    hamiltonian_with(&spectral, state, spec, grid)
}

fn hamiltonian_with(spectral: &Spectral, state: &TwoChannelState, spec: &CouplingSpec, grid: &GridSpec) -> [Vec<Complex64>; 2] {
    let kin = -grid.hbar * grid.hbar / (2.0 * grid.mass);
    let d1 = spectral.second_derivative(&state.phi1);
    let d2 = spectral.second_derivative(&state.phi2);
    let mut h1 = Vec::with_capacity(grid.n_points);
    let mut h2 = Vec::with_capacity(grid.n_points);
    for i in 0..grid.n_points {
        let x = grid.x(i);
        let v = spec.potential.eval(x, grid.mass);
        let w = spec.coupling_matrix(x, state.t);
        let (a, b) = (state.phi1[i], state.phi2[i]);
        h1.push(kin * d1[i] + v * a + w[0][0] * a + w[0][1] * b);
        h2.push(kin * d2[i] + v * b + w[1][0] * a + w[1][1] * b);
    }
    [h1, h2]
}

/// Amplitude/phase view `φ = A·exp(iS/ħ)` of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WkbView {
    pub amplitude: Vec<f64>,
    /// Action-valued phase, unwrapped along each connected run of unmasked
    /// points; zero where masked.
    pub phase: Vec<f64>,
    pub mask: Vec<bool>,
    pub hbar: f64,
}

impl WkbView {
    pub fn new(phi: &[Complex64], hbar: f64, threshold: f64) -> Self {
        let amplitude: Vec<f64> = phi.iter().map(|z| z.norm()).collect();
        let mask: Vec<bool> = amplitude.iter().map(|&a| a > threshold).collect();
        let mut phase = vec![0.0; phi.len()];
        let mut prev: Option<f64> = None;
        for i in 0..phi.len() {
            if !mask[i] {
                prev = None;
                continue;
            }
            let raw = phi[i].arg();
            let value = match prev {
                None => raw,
                Some(p) => {
                    let mut v = raw;
                    while v - p > PI {
                        v -= 2.0 * PI;
                    }
                    while v - p < -PI {
                        v += 2.0 * PI;
                    }
                    v
                }
            };
            phase[i] = value;
            prev = Some(value);
        }
        phase.iter_mut().for_each(|s| *s *= hbar);
        Self { amplitude, phase, mask, hbar }
    }

    pub fn reconstruct(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.amplitude[i], self.phase[i] / self.hbar)
    }

    pub fn masked_points(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Masked L² sizes of the terms in the amplitude/phase balances of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelDiagnostic {
    pub masked_points: usize,
    /// Cross-channel source in the Hamilton-Jacobi balance,
    /// `Σ_{k≠j} Re{(λ·σ)_jk·e^{i(S_k−S_j)/ħ}}·A_k`.
    pub hamilton_jacobi_source: f64,
    /// Cross-channel source in the transport balance,
    /// `(1/ħ)·Σ_{k≠j} Im{(λ·σ)_jk·e^{i(S_k−S_j)/ħ}}·A_k`.
    pub transport_source: f64,
    /// `∂A_j/∂t + ∇A_j·∇S_j/M`.
    pub transport_balance: f64,
    /// Classical flow `∇A_j·∇S_j/M + A_j·∇²S_j/(2M)`, the rate at which the
    /// amplitude changes along the classical trajectories.
    pub classical_flow: f64,
    /// `transport_source / classical_flow`. The transport balance itself is
    /// not used as the denominator: it equals the source up to the small
    /// `A·∇²S/(2M)` term, so that ratio would sit near one in every regime.
    pub ratio: f64,
    /// Relative residual of the Hamilton-Jacobi balance.
    pub hamilton_jacobi_residual: f64,
    /// Relative residual of the transport balance.
    pub transport_residual: f64,
}

impl ChannelDiagnostic {
    /// A channel with no point above the threshold.
    fn empty() -> Self {
        Self {
            masked_points: 0,
            hamilton_jacobi_source: 0.0,
            transport_source: 0.0,
            transport_balance: 0.0,
            classical_flow: 0.0,
            ratio: 0.0,
            hamilton_jacobi_residual: 0.0,
            transport_residual: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WkbDiagnostic {
    pub channels: [ChannelDiagnostic; 2],
}

impl WkbDiagnostic {
    pub fn max_ratio(&self) -> f64 {
        self.channels[0].ratio.max(self.channels[1].ratio)
    }
}

/// Default mask threshold: `1e-6` of the largest amplitude in either channel.
pub fn default_threshold(state: &TwoChannelState) -> f64 {
    let max = state.phi1.iter().chain(&state.phi2).map(|z| z.norm()).fold(0.0, f64::max);
    1e-6 * max
}

/// Evaluates the amplitude/phase balances of both channels.
///
/// Time derivatives come from `∂φ/∂t = −iHφ/ħ` and space derivatives are
/// spectral, so the residuals measure only rounding and masking effects.
/// A ratio well above one means the cross-channel source outruns classical
/// transport, i.e. classicality is broken.
pub fn wkb_diagnostic(state: &TwoChannelState, spec: &CouplingSpec, grid: &GridSpec, amplitude_threshold: f64) -> Result<WkbDiagnostic, QuantumError> {
    grid.validate()?;
    let spectral = Spectral::new(grid);
    let (hbar, mass, dx) = (grid.hbar, grid.mass, grid.dx());
    let h = hamiltonian_with(&spectral, state, spec, grid);
    let phis = [&state.phi1, &state.phi2];
    let mut out = [None, None];
    for j in 0..2 {
        let k = 1 - j;
        let phi = phis[j];
        let other = phis[k];
        let view = WkbView::new(phi, hbar, amplitude_threshold);
        if view.masked_points() == 0 {
            out[j] = Some(ChannelDiagnostic::empty());
            continue;
        }
        let d1 = spectral.derivative(phi);
        let d2 = spectral.second_derivative(phi);
        let mut acc = [0.0f64; 8];
        for i in 0..grid.n_points {
            if !view.mask[i] {
                continue;
            }
            let x = grid.x(i);
            let z = phi[i];
            let rho = z.norm_sqr();
            let amp = rho.sqrt();
            let dt_phi = -Complex64::i() * h[j][i] / hbar;
            let re1 = (z.conj() * d1[i]).re;
            let im1 = (z.conj() * d1[i]).im;
            let im2 = (z.conj() * d2[i]).im;
            let re2 = (z.conj() * d2[i]).re;
            let grad_a = re1 / amp;
            let lap_a = (d1[i].norm_sqr() + re2) / amp - re1 * re1 / (amp * rho);
            let grad_s = hbar * im1 / rho;
            let lap_s = hbar * (im2 / rho - 2.0 * im1 * re1 / (rho * rho));
            let dadt = (z.conj() * dt_phi).re / amp;
            let dsdt = hbar * (z.conj() * dt_phi).im / rho;

            let w = spec.coupling_matrix(x, state.t);
            // (λσ)_jk·e^{i(S_k − S_j)/ħ}·A_k = (λσ)_jk·φ_k·conj(φ_j)/A_j
            let cross = w[j][k] * other[i] * z.conj() / amp;
            let diag = w[j][j].re * amp;
            let hj_source = cross.re;
            let tr_source = cross.im / hbar;

            let balance = dadt + grad_a * grad_s / mass;
            let flow = grad_a * grad_s / mass + amp * lap_s / (2.0 * mass);
            // Transport: ∂A/∂t + ∇A·∇S/M = (1/ħ)ΣIm{…}A_k − A∇²S/(2M)
            let tr_res = balance - tr_source + amp * lap_s / (2.0 * mass);
            // Hamilton-Jacobi: A(∂S/∂t + (∇S)²/2M + V) = −ΣRe{…}A_k + (ħ²/2M)ΔA
            let v = spec.potential.eval(x, mass);
            let hj_lhs = amp * (dsdt + grad_s * grad_s / (2.0 * mass) + v);
            let hj_rhs = -(hj_source + diag) + hbar * hbar / (2.0 * mass) * lap_a;
            let hj_res = hj_lhs - hj_rhs;

            acc[0] += hj_source * hj_source;
            acc[1] += tr_source * tr_source;
            acc[2] += balance * balance;
            acc[3] += flow * flow;
            acc[4] += tr_res * tr_res;
            acc[5] += hj_res * hj_res;
            acc[6] += dadt * dadt + tr_source * tr_source + flow * flow;
            acc[7] += hj_lhs * hj_lhs + hj_rhs * hj_rhs;
        }
        let l2 = |s: f64| (s * dx).sqrt();
        let transport_source = l2(acc[1]);
        let classical_flow = l2(acc[3]);
        let ratio = if transport_source == 0.0 { 0.0 } else { transport_source / classical_flow };
        let rel = |res: f64, scale: f64| if scale > 0.0 { (res / scale).sqrt() } else { 0.0 };
        out[j] = Some(ChannelDiagnostic {
            masked_points: view.masked_points(),
            hamilton_jacobi_source: l2(acc[0]),
            transport_source,
            transport_balance: l2(acc[2]),
            classical_flow,
            ratio,
            hamilton_jacobi_residual: rel(acc[5], acc[7]),
            transport_residual: rel(acc[4], acc[6]),
        });
    }
    let channels = [out[0].unwrap(), out[1].unwrap()];
    if channels.iter().all(|c| c.masked_points == 0) {
        return Err(QuantumError::EmptyMask(amplitude_threshold));
    }
    Ok(WkbDiagnostic { channels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(-20.0, 20.0, 512).unwrap()
    }

    fn packet() -> GaussianPacket {
        GaussianPacket { center: 1.0, width: 0.8, momentum: 0.0 }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 1.0, 300).is_err());
        assert!(GridSpec::new(0.0, 1.0, 128).is_err());
        assert!(GridSpec::new(1.0, 0.0, 256).is_err());
        assert!(grid().with_hbar(0.0).is_err());
        let k = grid().wavenumbers();
        assert_eq!(k[0], 0.0);
        assert!(k[511] < 0.0);
    }

    #[test]
    fn init_state_splits_norms() {
        let g = grid();
        let s = init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), packet(), &g).unwrap();
        let (a, b) = s.norms(&g);
        assert!((a - 1.0).abs() < 1e-12 && b == 0.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let s = init_state(Complex64::new(r, 0.0), Complex64::new(r, 0.0), packet(), &g).unwrap();
        let (a, b) = s.norms(&g);
        assert!((a - 0.5).abs() < 1e-9 && (b - 0.5).abs() < 1e-9);
        let s = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8), packet(), &g).unwrap();
        let (a, b) = s.norms(&g);
        assert!((a - 0.36).abs() < 1e-12 && (b - 0.64).abs() < 1e-12);
    }

    #[test]
    fn init_state_errors() {
        let g = grid();
        assert!(matches!(
            init_state(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), packet(), &g),
            Err(QuantumError::UnnormalizedCoefficients(_))
        ));
        let thin = GaussianPacket { width: 0.1, ..packet() };
        assert!(matches!(
            init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), thin, &g),
            Err(QuantumError::UnresolvablePacket { .. })
        ));
    }

    #[test]
    fn decoupled_channels_keep_their_norms() {
        let g = grid();
        let s = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet(), &g).unwrap();
        let spec = CouplingSpec::default();
        let ev = evolve(&s, &spec, &g, &EvolveConfig { dt: 0.01, n_steps: 1000, record_every: 10, snapshot_every: None }).unwrap();
        assert!(ev.max_channel_drift() < 1e-10);
        assert!(!ev.edge_flagged);
    }

    #[test]
    fn rabi_oscillation_with_uniform_coupling() {
        let g = grid();
        let s = init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), packet(), &g).unwrap();
        let spec = CouplingSpec { lambda_x: Field::Constant { value: 0.5 }, ..Default::default() };
        let ev = evolve(&s, &spec, &g, &EvolveConfig { dt: 0.01, n_steps: 500, record_every: 5, snapshot_every: None }).unwrap();
        for (t, p) in ev.times.iter().zip(&ev.p1) {
            assert!((p - (0.5 * t).cos().powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn drift_guard_rejects_bad_config() {
        let g = grid();
        let s = init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), packet(), &g).unwrap();
        let bad = EvolveConfig { dt: 0.0, n_steps: 1, record_every: 1, snapshot_every: None };
        assert!(evolve(&s, &CouplingSpec::default(), &g, &bad).is_err());
    }

    #[test]
    fn wkb_view_reconstructs_the_wavefunction() {
        let g = grid();
        let p = GaussianPacket { center: 0.0, width: 1.0, momentum: 3.0 };
        let s = init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), p, &g).unwrap();
        let view = WkbView::new(&s.phi1, g.hbar, default_threshold(&s));
        for i in 0..g.n_points {
            if view.mask[i] {
                assert!((view.reconstruct(i) - s.phi1[i]).norm() < 1e-10);
            }
        }
        // Unwrapped phase of a plane wave times ħ is momentum·x.
        let inside: Vec<usize> = (0..g.n_points).filter(|&i| view.mask[i]).collect();
        let (a, b) = (inside[0], inside[inside.len() - 1]);
        let slope = (view.phase[b] - view.phase[a]) / (g.x(b) - g.x(a));
        assert!((slope - 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = grid();
        let s = init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), packet(), &g).unwrap();
        assert!(matches!(wkb_diagnostic(&s, &CouplingSpec::default(), &g, 10.0), Err(QuantumError::EmptyMask(_))));
    }
}
