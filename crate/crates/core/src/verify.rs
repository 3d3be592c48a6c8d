//! The acceptance suite, shared by `reduction-lab verify` and the
//! `acceptance` test target.
//!
//! Each criterion returns a [`CriterionResult`]; a module error inside a
//! criterion counts as a failure and its message becomes the detail.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::fokker_planck::{self as fp, FpGrid, Scheme, SolveConfig};
use crate::mixture::{self, Component, Ensemble};
use crate::quantum::{self, CouplingSpec, EvolveConfig, Field, GaussianPacket, GridSpec, Potential};
use crate::rng::stream_rng;
use crate::scenario::{self, Format, RunOptions};
use crate::series::estimate_correlations;
use crate::simplex::{
    run_ensemble, run_trajectory_observed, sample_path, CorrelationModel, EnsembleConfig, NormVector, StepConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Scratch space for the determinism reruns.
    pub work_dir: PathBuf,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 42, work_dir: std::env::temp_dir().join(format!("reduction-lab-verify-{}", std::process::id())) }
    }
}

type Outcome = Result<(bool, String), Box<dyn std::error::Error + Send + Sync>>;

fn finish(id: u8, name: &'static str, outcome: Outcome) -> CriterionResult {
    match outcome {
        Ok((passed, detail)) => CriterionResult { id, name, passed, detail },
        Err(e) => CriterionResult { id, name, passed: false, detail: format!("error: {e}") },
    }
}

const DT: f64 = 1e-3;
const T_MAX: f64 = 100.0;

fn ensemble(n: usize, seed: u64) -> EnsembleConfig {
    EnsembleConfig { n, dt: DT, t_max: T_MAX, seed, step: StepConfig::default() }
}

pub const BORN_CASES: [&[f64]; 4] = [&[0.3, 0.7], &[0.5, 0.5], &[0.2, 0.3, 0.5], &[0.1, 0.2, 0.3, 0.4]];

/// Winner frequencies within 3 binomial standard errors of `p0`, `n = 10⁵`.
pub fn born_rule(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let mut passed = true;
        let mut detail = String::new();
        for (i, p) in BORN_CASES.iter().enumerate() {
            let p0 = NormVector::new(p.to_vec())?;
            let model = CorrelationModel::uniform(p.len(), 1.0)?;
            let report = run_ensemble(&p0, &model, &ensemble(100_000, opts.seed.wrapping_add(i as u64)))?;
            let z = report.z_scores(p);
            let zmax = z.iter().cloned().fold(0.0, f64::max);
            passed &= zmax <= 3.0 && report.n_timeouts == 0;
            let _ = write!(detail, "{p:?} max|z|={zmax:.2}; ");
        }
        Ok((passed, detail.trim_end_matches("; ").to_string()))
    };
    finish(1, "born rule", outcome())
}

/// Every completed trajectory ends exactly on a vertex and no zeroed channel
/// ever becomes nonzero again.
pub fn absorption_finality(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let p0 = NormVector::new(vec![0.1, 0.2, 0.3, 0.4])?;
        let model = CorrelationModel::uniform(4, 1.0)?;
        let n = 20_000u64;
        let seed = opts.seed.wrapping_add(100);
        let results: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i);
                let mut dead = [false; 4];
                let mut revived = false;
                let record = run_trajectory_observed(&p0, &model, DT, T_MAX, &mut rng, StepConfig::default(), |_, s| {
                    for (j, (&v, &active)) in s.values().iter().zip(s.active_mask()).enumerate() {
                        if dead[j] && (v != 0.0 || active) {
                            revived = true;
                        }
                        if !active {
                            dead[j] |= v == 0.0;
                            revived |= v != 0.0;
                        }
                    }
                })?;
                let on_vertex = record.winner.is_some()
                    && record.terminal.vertex() == record.winner
                    && record.terminal.values()[record.winner.unwrap()] == 1.0;
                Ok::<_, crate::simplex::SimplexError>((record.timed_out(), on_vertex, revived))
            })
            .collect::<Result<_, _>>()?;
        let completed = results.iter().filter(|r| !r.0).count();
        let vertex = results.iter().filter(|r| !r.0 && r.1).count();
        let revived = results.iter().filter(|r| r.2).count();
        Ok((
            completed > 0 && vertex == completed && revived == 0,
            format!("{vertex}/{completed} completed on a vertex, {revived} revivals, {} timeouts", n as usize - completed),
        ))
    };
    finish(2, "absorption finality", outcome())
}

/// Mean hitting time against `x(1−x)/A` within 5%, `n = 10⁴`.
pub fn mean_first_passage(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let mut passed = true;
        let mut detail = String::new();
        for (i, x) in [0.2, 0.5, 0.8].into_iter().enumerate() {
            let a = 1.0;
            let report = run_ensemble(
                &NormVector::new(vec![x, 1.0 - x])?,
                &CorrelationModel::uniform(2, a)?,
                &ensemble(10_000, opts.seed.wrapping_add(200 + i as u64)),
            )?;
            let exact = x * (1.0 - x) / a;
            let rel = (report.mean_hitting_time - exact).abs() / exact;
            passed &= rel <= 0.05;
            let _ = write!(detail, "x={x}: {:.4} vs {exact:.4} ({:.1}%); ", report.mean_hitting_time, 100.0 * rel);
        }
        Ok((passed, detail.trim_end_matches("; ").to_string()))
    };
    finish(3, "mean first passage", outcome())
}

fn fp_solution(x0: f64) -> Result<fp::FpSolution, fp::FpError> {
    let grid = FpGrid::from_pair_coefficient(199, 1.0)?;
    fp::solve(&grid, x0, &SolveConfig { t_end: 6.0, dt: 1e-3, scheme: Scheme::Implicit, snapshot_every: 0 })
}

/// PDE absorbed split against the Monte Carlo winner frequency, within
/// `3·se + 1e-3`.
pub fn mc_pde_agreement(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let mut passed = true;
        let mut detail = String::new();
        for (i, x0) in [0.3, 0.5].into_iter().enumerate() {
            let sol = fp_solution(x0)?;
            // Channel 1 carries the coordinate x, so it wins at the x = 1 wall.
            let report = run_ensemble(
                &NormVector::new(vec![1.0 - x0, x0])?,
                &CorrelationModel::uniform(2, 1.0)?,
                &ensemble(10_000, opts.seed.wrapping_add(300 + i as u64)),
            )?;
            let f1 = report.frequencies[1];
            let tol = 3.0 * report.standard_errors[1] + 1e-3;
            let diff = (sol.absorbed_mass_1() - f1).abs();
            passed &= diff <= tol;
            let _ = write!(detail, "x0={x0}: pde {:.4} mc {f1:.4} (|d|={diff:.4} <= {tol:.4}); ", sol.absorbed_mass_1());
        }
        Ok((passed, detail.trim_end_matches("; ").to_string()))
    };
    finish(4, "mc/pde agreement", outcome())
}

/// Survival decay rate against the smallest generator eigenvalue within 2%.
pub fn spectral_remark(_: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let x0 = 0.5;
        let sol = fp_solution(x0)?;
        let lambda = fp::smallest_eigenvalue(&fp::build_generator(&sol.grid))?;
        let decay = fp::survival_decay_rate(&sol)?;
        let rel = (decay - lambda).abs() / lambda;
        Ok((
            rel <= 0.02,
            format!(
                "decay {decay:.4} vs eigenvalue {lambda:.4} ({:.2}%); 1/eigenvalue {:.4} vs exact mean hitting time {:.4}",
                100.0 * rel,
                1.0 / lambda,
                x0 * (1.0 - x0)
            ),
        ))
    };
    finish(5, "spectral remark", outcome())
}

fn bench_grid(n: usize) -> Result<GridSpec, quantum::QuantumError> {
    GridSpec::new(-20.0, 20.0, n)
}

fn packet() -> GaussianPacket {
    GaussianPacket { center: 1.0, width: std::f64::consts::FRAC_1_SQRT_2, momentum: 0.0 }
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Pointer runs keep each channel norm fixed; every coupling keeps the total.
pub fn pointer_conservation(_: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let grid = bench_grid(256)?;
        let c = (Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8));
        let cfg = EvolveConfig { dt: 1e-3, n_steps: 10_000, record_every: 10, snapshot_every: None };
        let harmonic = Potential::Harmonic { omega: 1.0 };
        let pointer = CouplingSpec {
            potential: harmonic,
            lambda_z: Field::Linear { offset: 0.2, slope: 0.5 },
            ..Default::default()
        };
        let others = [
            CouplingSpec { potential: harmonic, lambda_x: Field::Constant { value: 0.7 }, ..Default::default() },
            CouplingSpec {
                potential: harmonic,
                lambda_x: Field::Linear { offset: 0.0, slope: 0.5 },
                lambda_y: Field::Ramped { value: 0.3, ramp: 2.0 },
                lambda_z: Field::Constant { value: 0.1 },
            },
        ];
        let state = quantum::init_state(c.0, c.1, packet(), &grid)?;
        let ev = quantum::evolve(&state, &pointer, &grid, &cfg)?;
        let channel = ev.max_channel_drift();
        let mut total = ev.max_norm_drift;
        for spec in &others {
            total = total.max(quantum::evolve(&state, spec, &grid, &cfg)?.max_norm_drift);
        }
        Ok((
            channel <= 1e-8 && total <= 1e-8,
            format!("pointer channel drift {channel:.2e}, max total-norm drift {total:.2e} over 10000 steps"),
        ))
    };
    finish(6, "pointer conservation", outcome())
}

/// `p₁(t) = cos²(λt/ħ)` for constant `λ_x`, in three settings.
pub fn rabi_oracle(_: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let settings = [(0.5, 1.0, 1.0), (1.3, 0.5, 1.0), (0.25, 1.0, 2.0)];
        let mut worst: f64 = 0.0;
        let mut detail = String::new();
        for (lambda, hbar, mass) in settings {
            let grid = bench_grid(256)?.with_hbar(hbar)?.with_mass(mass)?;
            let spec = CouplingSpec { lambda_x: Field::Constant { value: lambda }, ..Default::default() };
            let packet = GaussianPacket { center: 0.0, width: 1.0, momentum: 0.0 };
            let state = quantum::init_state(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), packet, &grid)?;
            let cfg = EvolveConfig { dt: 1e-3, n_steps: 5_000, record_every: 10, snapshot_every: None };
            let ev = quantum::evolve(&state, &spec, &grid, &cfg)?;
            let err = ev
                .times
                .iter()
                .zip(&ev.p1)
                .map(|(&t, &p)| (p - (lambda * t / hbar).cos().powi(2)).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
            let _ = write!(detail, "λ={lambda} ħ={hbar} M={mass}: {err:.1e}; ");
        }
        Ok((worst <= 1e-6, detail.trim_end_matches("; ").to_string()))
    };
    finish(7, "rabi oracle", outcome())
}

/// Synthetic `A` recovered within 10%; a non-diagonal quantum run gives
/// `Â₁₂ > 0` at 3 standard errors or more.
pub fn fluctuation_bridge(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let a = 0.8;
        let p0 = NormVector::new(vec![0.5, 0.5])?;
        let model = CorrelationModel::uniform(2, a)?;
        let mut rng = stream_rng(opts.seed.wrapping_add(800), 0);
        let series = sample_path(&p0, &model, 1e-6, 20_000, &mut rng, StepConfig::default())?;
        let est = estimate_correlations(&series, 1)?;
        let rel = (est.a[0][1] - a).abs() / a;

        let grid = bench_grid(512)?;
        let spec = CouplingSpec { lambda_x: Field::Linear { offset: 0.0, slope: 0.5 }, ..Default::default() };
        let packet = GaussianPacket { center: 2.0, width: INV_SQRT_2, momentum: 0.0 };
        let state = quantum::init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet, &grid)?;
        let cfg = EvolveConfig { dt: 1e-2, n_steps: 20_000, record_every: 10, snapshot_every: None };
        let ev = quantum::evolve(&state, &spec, &grid, &cfg)?;
        let q = estimate_correlations(&ev.norm_series(), 5)?;
        let sig = q.significance(0, 1);
        Ok((
            rel <= 0.10 && q.a[0][1] > 0.0 && sig >= 3.0,
            format!(
                "synthetic A={a}: {:.4} ({:.1}%); quantum Â12 = {:.3e} ± {:.1e} ({sig:.1} se)",
                est.a[0][1],
                100.0 * rel,
                q.a[0][1],
                q.standard_error[0][1]
            ),
        ))
    };
    finish(8, "fluctuation bridge", outcome())
}

/// Combined variance from per-component series against direct pooled
/// statistics of the mixture, plus the worked value.
pub fn mixture_variance(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let worked = mixture::combine_variances(&[0.25, 0.75], &[vec![4e-4, 4e-4], vec![0.0, 0.0]]);
        let worked_ok = worked == vec![1e-4, 1e-4];
        let (combined, combined_se, pooled, pooled_se) = mixture_statistics(opts.seed.wrapping_add(900))?;
        let tol = 3.0 * combined_se.hypot(pooled_se);
        Ok((
            worked_ok && (combined - pooled).abs() <= tol,
            format!(
                "worked value {:e}; combined {combined:.4e} vs pooled {pooled:.4e} (|d|={:.2e} <= {tol:.2e})",
                worked[0],
                (combined - pooled).abs()
            ),
        ))
    };
    finish(9, "mixture variance", outcome())
}

/// Two components with `A = 1` and `A = 0.2`, weights `(0.25, 0.75)`.
///
/// The combined value comes from one long series per component. The pooled
/// value samples the mixture directly: each of `m` fresh paths draws its
/// component with probability `π_α` and contributes one increment.
/// Returns `(combined, se, pooled, se)` of the variance of `δp₁` over one step.
pub fn mixture_statistics(seed: u64) -> Result<(f64, f64, f64, f64), Box<dyn std::error::Error + Send + Sync>> {
    let weights = [0.25, 0.75];
    let coefficients = [1.0, 0.2];
    let dt = 1e-6;
    let p0 = NormVector::new(vec![0.5, 0.5])?;
    let models: Vec<_> = coefficients.iter().map(|&a| CorrelationModel::uniform(2, a)).collect::<Result<_, _>>()?;
    let mut parts = Vec::new();
    let mut se2 = 0.0;
    for (i, (model, &w)) in models.iter().zip(&weights).enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let series = sample_path(&p0, model, dt, 20_000, &mut rng, StepConfig::default())?;
        let (incs, _) = series.windowed_increments(1)?;
        let sq: Vec<f64> = incs.iter().map(|d| d[0] * d[0]).collect();
        se2 += w * w * sample_variance(&sq) / sq.len() as f64;
        parts.push(Component { weight: w, series });
    }
    let ens = Ensemble::new(parts)?;
    let combined = mixture::combine_fluctuation_variance(&ens, dt)?[0];

    let m = 20_000u64;
    let draws: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed.wrapping_add(1), i);
            let alpha = usize::from(rng.random::<f64>() >= weights[0]);
            let path = sample_path(&p0, &models[alpha], dt, 1, &mut rng, StepConfig::default())?;
            let d = path.values()[1][0] - path.values()[0][0];
            Ok(d * d)
        })
        .collect::<Result<_, crate::simplex::SimplexError>>()?;
    let pooled = draws.iter().sum::<f64>() / m as f64;
    let pooled_se = (sample_variance(&draws) / m as f64).sqrt();
    Ok((combined, se2.sqrt(), pooled, pooled_se))
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Scenarios rerun at 1 and 8 threads for the determinism check.
pub const DETERMINISM_SCENARIOS: [(&str, &str); 3] = [
    (
        "diffusion",
        r#"kind = "diffusion"
seed = 42

[diffusion]
p0 = [0.2, 0.3, 0.5]
model = { kind = "constant", a = 1.0 }
trajectories = 4000
"#,
    ),
    (
        "fokker-planck",
        r#"kind = "fokker-planck"
seed = 7

[fokker_planck]
x0 = 0.3
a = 1.0
t_end = 2.0
"#,
    ),
    (
        "mixture",
        r#"kind = "mixture"
seed = 11

[mixture]
interval = 1e-6
born_trajectories = 2000

[[mixture.components]]
weight = 0.25
synthetic = { p0 = [0.5, 0.5], model = { kind = "constant", a = 1.0 }, dt = 1e-6, steps = 5000 }

[[mixture.components]]
weight = 0.75
synthetic = { p0 = [0.5, 0.5], model = { kind = "constant", a = 0.2 }, dt = 1e-6, steps = 5000 }
"#,
    ),
];

fn read_dir_sorted(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        files.push((entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path())?));
    }
    files.sort();
    Ok(files)
}

/// Runs `text` at 1 and 8 threads under `work_dir` and reports whether every
/// output file is byte-identical.
pub fn rerun_identical(text: &str, work_dir: &Path, label: &str) -> Result<bool, Box<dyn std::error::Error + Send + Sync>> {
    let scenario = scenario::parse_scenario(text)?;
    let mut outputs = Vec::new();
    for threads in [1, 8] {
        let dir = work_dir.join(format!("{label}-t{threads}"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        let opts = RunOptions { out_dir: dir.clone(), format: Format::Csv, threads: Some(threads) };
        scenario::run_scenario(&scenario, &opts)?;
        outputs.push(read_dir_sorted(&dir)?);
    }
    Ok(outputs[0] == outputs[1])
}

/// Scenario outputs at 1 and 8 threads compare byte for byte.
pub fn determinism(opts: &VerifyOptions) -> CriterionResult {
    let outcome = || -> Outcome {
        let mut passed = true;
        let mut detail = String::new();
        for (label, text) in DETERMINISM_SCENARIOS {
            let same = rerun_identical(text, &opts.work_dir, label)?;
            passed &= same;
            let _ = write!(detail, "{label}: {}; ", if same { "identical" } else { "DIFFERENT" });
        }
        Ok((passed, detail.trim_end_matches("; ").to_string()))
    };
    finish(10, "determinism", outcome())
}

pub type Criterion = fn(&VerifyOptions) -> CriterionResult;

pub const CRITERIA: [Criterion; 10] = [
    born_rule,
    absorption_finality,
    mean_first_passage,
    mc_pde_agreement,
    spectral_remark,
    pointer_conservation,
    rabi_oracle,
    fluctuation_bridge,
    mixture_variance,
    determinism,
];

/// Runs every criterion in order, calling `report` as each one finishes.
pub fn run_all(opts: &VerifyOptions, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|c| {
            let r = c(opts);
            report(&r);
            r
        })
        .collect()
}
