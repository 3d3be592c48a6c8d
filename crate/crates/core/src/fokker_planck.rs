//! Two-channel Fokker-Planck equation on the unit interval.
//!
//! With `x = p₁` the diffusion on the 1-simplex has density `P(x, t)` obeying
//! `∂P/∂t = D·∂²P/∂x²` with `P = 0` at both ends. The diffusion coefficient is
//! `D = A/2`, which is the density equation of a process whose increments have
//! variance `A·dt`, the same process the Monte Carlo stepper draws.
//!
//! The grid is vertex centred: `n_cells` interior nodes at `x_i = i·dx`,
//! `dx = 1/(n_cells + 1)`, with the walls at `x = 0` and `x = 1` carrying zero
//! density. The loss of interior mass through each wall is accumulated as
//! absorbed mass, so interior plus absorbed mass is conserved to rounding.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("grid needs at least 16 cells, got {0}")]
    TooFewCells(usize),
    #[error("diffusion coefficient must be finite and > 0, got {0}")]
    BadDiffusion(f64),
    #[error("initial position {0} must lie strictly inside (0, 1)")]
    BadInitialPosition(f64),
    #[error("invalid time parameter: {0}")]
    BadTime(String),
    #[error("explicit step dt = {dt} exceeds the stability bound {bound}")]
    UnstableStep { dt: f64, bound: f64 },
    #[error("interior mass never dropped below 0.1 (minimum {min_mass})")]
    InsufficientDecay { min_mass: f64 },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
}

/// Uniform grid of interior nodes on (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpGrid {
    n_cells: usize,
    dx: f64,
    diffusion: f64,
}

impl FpGrid {
    pub fn new(n_cells: usize, diffusion: f64) -> Result<Self, FpError> {
        if n_cells < 16 {
            return Err(FpError::TooFewCells(n_cells));
        }
        if !(diffusion.is_finite() && diffusion > 0.0) {
            return Err(FpError::BadDiffusion(diffusion));
        }
        Ok(Self { n_cells, dx: 1.0 / (n_cells as f64 + 1.0), diffusion })
    }

    /// Grid for a pair coefficient `A`, i.e. `D = A/2`.
    pub fn from_pair_coefficient(n_cells: usize, a: f64) -> Result<Self, FpError> {
        Self::new(n_cells, 0.5 * a)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn diffusion_coefficient(&self) -> f64 {
        self.diffusion
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (1..=self.n_cells).map(|i| i as f64 * self.dx).collect()
    }

    /// Largest stable step of the explicit scheme.
    pub fn explicit_dt_bound(&self) -> f64 {
        self.dx * self.dx / (2.0 * self.diffusion)
    }
}

/// Symmetric tridiagonal matrix stored by diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.lower[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    /// Solves `(shift·I − self)·x = rhs` with the Thomas algorithm.
    pub fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let b0 = shift - self.diag[0];
        c[0] = if n > 1 { -self.upper[0] / b0 } else { 0.0 };
        d[0] = rhs[0] / b0;
        for i in 1..n {
            let a = -self.lower[i - 1];
            let b = shift - self.diag[i];
            let m = b - a * c[i - 1];
            if i + 1 < n {
                c[i] = -self.upper[i] / m;
            }
            d[i] = (rhs[i] - a * d[i - 1]) / m;
        }
        let mut x = d;
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }
}

/// `D·∂²/∂x²` with zero density on both walls.
pub fn build_generator(grid: &FpGrid) -> Tridiagonal {
    let n = grid.n_cells;
    let r = grid.diffusion / (grid.dx * grid.dx);
    Tridiagonal { lower: vec![r; n - 1], diag: vec![-2.0 * r; n], upper: vec![r; n - 1] }
}

/// Smallest eigenvalue of `−generator`, by shifted inverse iteration.
pub fn smallest_eigenvalue(generator: &Tridiagonal) -> Result<f64, FpError> {
    let n = generator.n();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
    normalize(&mut v);
    let mut lambda = rayleigh(generator, &v);
    for _ in 0..500 {
        // −L is positive definite, so solving (0·I − L) w = v never hits a pivot of zero.
        let mut w = generator.solve_shifted(0.0, &v);
        normalize(&mut w);
        let next = rayleigh(generator, &w);
        v = w;
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    Err(FpError::NoConvergence)
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

fn rayleigh(generator: &Tridiagonal, v: &[f64]) -> f64 {
    let lv = generator.apply(v);
    -v.iter().zip(&lv).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Backward Euler: unconditionally stable and positivity preserving.
    #[default]
    Implicit,
    /// Forward Euler, valid for `dt ≤ dx²/(2D)`.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Store a density snapshot every this many steps (the first and last
    /// states are always stored).
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub density: Vec<f64>,
}

/// Density evolution with cumulative absorbed masses at `x = 0` and `x = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpSolution {
    pub grid: FpGrid,
    /// The node that received the initial mass, after splitting (see [`solve`]).
    pub x0: f64,
    pub times: Vec<f64>,
    pub interior_mass: Vec<f64>,
    pub absorbed_0: Vec<f64>,
    pub absorbed_1: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Most negative density value clamped to zero during the run.
    pub clamped_min: f64,
}

impl FpSolution {
    pub fn absorbed_mass_0(&self) -> f64 {
        *self.absorbed_0.last().unwrap_or(&0.0)
    }

    pub fn absorbed_mass_1(&self) -> f64 {
        *self.absorbed_1.last().unwrap_or(&0.0)
    }

    pub fn final_interior_mass(&self) -> f64 {
        *self.interior_mass.last().unwrap_or(&1.0)
    }

    /// Largest `|interior + absorbed − 1|` over the recorded times.
    pub fn max_mass_defect(&self) -> f64 {
        self.interior_mass
            .iter()
            .zip(&self.absorbed_0)
            .zip(&self.absorbed_1)
            .map(|((m, a), b)| (m + a + b - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t,x,density`, one row per node per snapshot.
    pub fn write_density_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,density")?;
        let xs = self.grid.x_centers();
        for s in &self.snapshots {
            for (x, d) in xs.iter().zip(&s.density) {
                writeln!(out, "{},{},{}", s.t, x, d)?;
            }
        }
        Ok(())
    }

    /// CSV with columns `t,mass0,mass1`.
    pub fn write_absorbed_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,mass0,mass1")?;
        for ((t, a), b) in self.times.iter().zip(&self.absorbed_0).zip(&self.absorbed_1) {
            writeln!(out, "{t},{a},{b}")?;
        }
        Ok(())
    }
}

/// Evolves a unit mass started at `x0` up to `t_end`.
///
/// The delta datum is placed on the two nodes bracketing `x0` with weights
/// that reproduce both the unit mass and the first moment `x0`; when `x0`
/// falls on a node all mass goes to that node.
pub fn solve(grid: &FpGrid, x0: f64, config: &SolveConfig) -> Result<FpSolution, FpError> {
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(FpError::BadInitialPosition(x0));
    }
    let SolveConfig { t_end, dt, scheme, snapshot_every } = *config;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(FpError::BadTime(format!("t_end = {t_end}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(FpError::BadTime(format!("dt = {dt}")));
    }
    if scheme == Scheme::Explicit && dt > grid.explicit_dt_bound() {
        return Err(FpError::UnstableStep { dt, bound: grid.explicit_dt_bound() });
    }
    let n = grid.n_cells;
    let dx = grid.dx;
    let generator = build_generator(grid);
    let flux_factor = grid.diffusion / dx;

    // Nodes are x_i = i·dx for i = 1..=n; index 0 in `density` is node 1.
    let mut density = vec![0.0; n];
    let s = x0 / dx;
    let lo = s.floor();
    let frac = s - lo;
    let lo = lo as usize;
    let mut place = |node: usize, mass: f64| {
        if mass > 0.0 && (1..=n).contains(&node) {
            density[node - 1] += mass / dx;
        }
    };
    if frac < 1e-12 {
        place(lo, 1.0);
    } else {
        place(lo, 1.0 - frac);
        place(lo + 1, frac);
    }
    // A share that would land on a wall at x = 0 or 1 is absorbed at once.
    let initial_0 = if lo == 0 { 1.0 - frac } else { 0.0 };
    let initial_1 = if lo + 1 == n + 1 { frac } else { 0.0 };

    let n_steps = (t_end / dt).ceil() as usize;
    let snapshot_every = snapshot_every.max(1);
    let mut sol = FpSolution {
        grid: grid.clone(),
        x0,
        times: Vec::with_capacity(n_steps + 1),
        interior_mass: Vec::with_capacity(n_steps + 1),
        absorbed_0: Vec::with_capacity(n_steps + 1),
        absorbed_1: Vec::with_capacity(n_steps + 1),
        snapshots: Vec::new(),
        clamped_min: 0.0,
    };
    let mut absorbed_0 = initial_0;
    let mut absorbed_1 = initial_1;
    let record = |sol: &mut FpSolution, t: f64, density: &[f64], a0: f64, a1: f64, snap: bool| {
        sol.times.push(t);
        sol.interior_mass.push(density.iter().sum::<f64>() * dx);
        sol.absorbed_0.push(a0);
        sol.absorbed_1.push(a1);
        if snap {
            sol.snapshots.push(Snapshot { t, density: density.to_vec() });
        }
    };
    record(&mut sol, 0.0, &density, absorbed_0, absorbed_1, true);

    for step in 1..=n_steps {
        let t = (step as f64 * dt).min(t_end);
        let h = t - (step - 1) as f64 * dt;
        match scheme {
            Scheme::Implicit => {
                // (I − h·L) P' = P, scaled by 1/h.
                let rhs: Vec<f64> = density.iter().map(|p| p / h).collect();
                density = generator.solve_shifted(1.0 / h, &rhs);
                absorbed_0 += h * flux_factor * density[0];
                absorbed_1 += h * flux_factor * density[n - 1];
            }
            Scheme::Explicit => {
                absorbed_0 += h * flux_factor * density[0];
                absorbed_1 += h * flux_factor * density[n - 1];
                let lp = generator.apply(&density);
                density.iter_mut().zip(&lp).for_each(|(p, l)| *p += h * l);
            }
        }
        for p in density.iter_mut() {
            if *p < 0.0 {
                if *p < -1e-12 {
                    log::warn!("clamping negative density {p} at t = {t}");
                }
                sol.clamped_min = sol.clamped_min.min(*p);
                *p = 0.0;
            }
        }
        let snap = step % snapshot_every == 0 || step == n_steps;
        record(&mut sol, t, &density, absorbed_0, absorbed_1, snap);
    }
    Ok(sol)
}

/// Least-squares decay rate of the interior mass over the final third of the
/// run, i.e. `−d log(mass)/dt`.
pub fn survival_decay_rate(solution: &FpSolution) -> Result<f64, FpError> {
    let min_mass = solution.interior_mass.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_mass < 0.1) {
        return Err(FpError::InsufficientDecay { min_mass });
    }
    let t_last = *solution.times.last().unwrap_or(&0.0);
    let t_start = 2.0 * t_last / 3.0;
    let (mut n, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &m) in solution.times.iter().zip(&solution.interior_mass) {
        if t < t_start || m <= 0.0 {
            continue;
        }
        let y = m.ln();
        n += 1.0;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    if n < 2.0 {
        return Err(FpError::InsufficientDecay { min_mass });
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    Ok(-slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(t_end: f64, dt: f64) -> SolveConfig {
        SolveConfig { t_end, dt, scheme: Scheme::Implicit, snapshot_every: 100 }
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(FpGrid::new(8, 0.5), Err(FpError::TooFewCells(8))));
        assert!(matches!(FpGrid::new(32, 0.0), Err(FpError::BadDiffusion(_))));
        let g = FpGrid::new(99, 0.5).unwrap();
        assert_eq!(g.x_centers().len(), 99);
        assert!((g.dx() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn generator_annihilates_constant_in_interior_rows() {
        let g = FpGrid::new(64, 0.5).unwrap();
        let l = build_generator(&g);
        let lv = l.apply(&vec![1.0; 64]);
        assert!(lv[1..63].iter().all(|&x| x.abs() < 1e-9));
        assert!(lv[0] < 0.0 && lv[63] < 0.0);
    }

    #[test]
    fn sine_mode_is_an_eigenvector_to_second_order() {
        let g = FpGrid::new(200, 0.5).unwrap();
        let l = build_generator(&g);
        let s: Vec<f64> = g.x_centers().iter().map(|x| (PI * x).sin()).collect();
        let ls = l.apply(&s);
        let exact = 0.5 * PI * PI;
        let err = s.iter().zip(&ls).map(|(a, b)| (b + exact * a).abs()).fold(0.0, f64::max);
        // Local truncation error D·π⁴·dx²/12.
        let bound = 0.5 * PI.powi(4) * g.dx() * g.dx() / 12.0;
        assert!(err <= 1.01 * bound, "err = {err}, bound = {bound}");
    }

    #[test]
    fn smallest_eigenvalue_matches_closed_forms() {
        let g = FpGrid::new(200, 0.5).unwrap();
        let lambda = smallest_eigenvalue(&build_generator(&g)).unwrap();
        let dx = g.dx();
        let discrete = 0.5 * 4.0 / (dx * dx) * (PI * dx / 2.0).sin().powi(2);
        assert!((lambda - discrete).abs() < 1e-9 * discrete);
        assert!((lambda - 0.5 * PI * PI).abs() < 0.01 * 0.5 * PI * PI);
    }

    #[test]
    fn explicit_scheme_validates_step() {
        let g = FpGrid::new(99, 0.5).unwrap();
        let bad = SolveConfig { t_end: 0.1, dt: 1e-3, scheme: Scheme::Explicit, snapshot_every: 1 };
        assert!(matches!(solve(&g, 0.5, &bad), Err(FpError::UnstableStep { .. })));
        let ok = SolveConfig { dt: 5e-5, ..bad };
        let sol = solve(&g, 0.5, &ok).unwrap();
        assert!(sol.max_mass_defect() < 1e-12);
    }

    #[test]
    fn symmetric_split_and_conservation() {
        let g = FpGrid::from_pair_coefficient(199, 1.0).unwrap();
        let sol = solve(&g, 0.5, &cfg(3.0, 1e-3)).unwrap();
        assert!((sol.absorbed_mass_0() - 0.5).abs() < 1e-3);
        assert!((sol.absorbed_mass_1() - 0.5).abs() < 1e-3);
        assert!(sol.max_mass_defect() < 1e-6);
        assert!(sol.absorbed_0.windows(2).all(|w| w[1] >= w[0]));
        assert!(sol.absorbed_1.windows(2).all(|w| w[1] >= w[0]));
        assert!(sol.snapshots.iter().all(|s| s.density.iter().all(|&d| d >= 0.0)));
    }

    #[test]
    fn off_node_start_keeps_first_moment() {
        let g = FpGrid::from_pair_coefficient(64, 1.0).unwrap();
        let sol = solve(&g, 0.3, &cfg(5.0, 1e-3)).unwrap();
        assert!((sol.absorbed_mass_1() - 0.3).abs() < 1e-3);
        assert!(matches!(solve(&g, 0.0, &cfg(1.0, 1e-3)), Err(FpError::BadInitialPosition(_))));
    }

    #[test]
    fn decay_rate_requires_decay() {
        let g = FpGrid::from_pair_coefficient(64, 1.0).unwrap();
        let sol = solve(&g, 0.5, &cfg(0.05, 1e-3)).unwrap();
        assert!(matches!(survival_decay_rate(&sol), Err(FpError::InsufficientDecay { .. })));
    }
}
