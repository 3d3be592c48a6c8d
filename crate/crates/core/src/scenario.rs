//! TOML scenarios, run orchestration and report files.
//!
//! A scenario names its `kind`, a `seed`, and one parameter block matching the
//! kind. Unknown keys are rejected. Every parameter is validated by the
//! owning module before anything runs. A run writes `summary.json` (schema in
//! `schema/summary.schema.json`) and, in `csv` format, the CSV series of the
//! kind:
//!
//! | kind            | files                                                        |
//! |-----------------|--------------------------------------------------------------|
//! | `diffusion`     | `trajectories.csv`: `trajectory_id,winner,hitting_time,steps` |
//! | `fokker-planck` | `density.csv`: `t,x,density`; `absorbed.csv`: `t,mass0,mass1` |
//! | `quantum`       | `norms.csv`: `t,p1,p2,total_norm`; `final_state.csv`          |
//! | `mixture`       | `combined_norms.csv`: `t,p1,…,pN`                             |
//! | `bridge`        | `norms.csv` and `trajectories.csv`                            |
//!
//! Winners in `trajectories.csv` are 0-based channel indices; the column is
//! empty for a trajectory that timed out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fokker_planck::{self as fp, FpError, FpGrid, Scheme, SolveConfig};
use crate::mixture::{self, Component, Ensemble, MixtureError};
use crate::quantum::{self, CouplingSpec, EvolveConfig, GaussianPacket, GridSpec, QuantumError, TwoChannelState};
use crate::rng::stream_rng;
use crate::series::{estimate_correlations, SeriesError};
use crate::simplex::{
    run_ensemble_records, sample_path, AbsorptionRecord, BornReport, CorrelationModel, EnsembleConfig, NormVector,
    PairMatrix, SimplexError, StepConfig,
};

/// Identifier written into every summary.
pub const SUMMARY_SCHEMA: &str = "brownian-reduction/summary/v1";

#[derive(Debug, Error)]
pub enum ModuleError {
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    FokkerPlanck(#[from] FpError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Malformed TOML, unknown keys or wrongly typed values. The message
    /// carries the line and column reported by the parser.
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {source}")]
    Validation { field: String, source: ModuleError },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Runtime { context: String, source: ModuleError },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ScenarioError {
    /// Process exit code: 2 for configuration problems, 3 for runtime ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) | Self::Validation { .. } | Self::Config(_) => 2,
            Self::Runtime { .. } | Self::Io { .. } => 3,
        }
    }
}

fn invalid(field: &str) -> impl FnOnce(ModuleError) -> ScenarioError + '_ {
    move |source| ScenarioError::Validation { field: field.to_string(), source }
}

fn runtime(context: &str) -> impl FnOnce(ModuleError) -> ScenarioError + '_ {
    move |source| ScenarioError::Runtime { context: context.to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Diffusion,
    FokkerPlanck,
    Quantum,
    Mixture,
    Bridge,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Diffusion => "diffusion",
            Self::FokkerPlanck => "fokker-planck",
            Self::Quantum => "quantum",
            Self::Mixture => "mixture",
            Self::Bridge => "bridge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// `summary.json` plus the CSV series.
    #[default]
    Csv,
    /// `summary.json` only.
    JsonSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Constant,
    Bilinear,
    TimeRamp,
}

/// Correlation model block. `a` sets every pair to the same coefficient;
/// `coefficients` gives the full matrix instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    pub a: Option<f64>,
    pub coefficients: Option<Vec<Vec<f64>>>,
    pub gain: Option<f64>,
    pub ramp: Option<f64>,
}

impl ModelBlock {
    fn build(&self, channels: usize, field: &str) -> Result<CorrelationModel, ScenarioError> {
        let matrix = || -> Result<PairMatrix, ScenarioError> {
            match (&self.a, &self.coefficients) {
                (Some(a), None) => PairMatrix::uniform(channels, *a).map_err(|e| invalid(field)(e.into())),
                (None, Some(rows)) => PairMatrix::new(rows.clone()).map_err(|e| invalid(field)(e.into())),
                _ => Err(ScenarioError::Config(format!("{field}: give exactly one of `a` or `coefficients`"))),
            }
        };
        let model = match self.kind {
            ModelKind::Constant => CorrelationModel::constant(matrix()?),
            ModelKind::TimeRamp => {
                let ramp = self.ramp.ok_or_else(|| ScenarioError::Config(format!("{field}: time-ramp needs `ramp`")))?;
                CorrelationModel::time_ramp(matrix()?, ramp).map_err(|e| invalid(field)(e.into()))?
            }
            ModelKind::Bilinear => {
                let gain = self.gain.ok_or_else(|| ScenarioError::Config(format!("{field}: bilinear needs `gain`")))?;
                CorrelationModel::bilinear(channels, gain).map_err(|e| invalid(field)(e.into()))?
            }
        };
        if model.channels() != channels {
            return Err(invalid(field)(SimplexError::ChannelMismatch { model: model.channels(), state: channels }.into()));
        }
        Ok(model)
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_max() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BornExpect {
    /// Each winner frequency within this many binomial standard errors of `p0`.
    pub born_sigma: Option<f64>,
    pub mean_hitting_time: Option<f64>,
    /// Relative tolerance on `mean_hitting_time`.
    pub hitting_time_rel_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionBlock {
    pub p0: Vec<f64>,
    pub model: ModelBlock,
    pub trajectories: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub expect: BornExpect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FpExpect {
    /// Tolerance on the absorbed split `(1 − x0, x0)`.
    pub split_tolerance: Option<f64>,
    pub mass_tolerance: Option<f64>,
    /// Relative tolerance of the decay rate against the smallest eigenvalue.
    pub decay_rel_tol: Option<f64>,
}

fn default_cells() -> usize {
    199
}

fn default_snapshot_every() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpBlock {
    pub x0: f64,
    /// Pair coefficient; the solver uses `D = a/2`.
    pub a: f64,
    #[serde(default = "default_cells")]
    pub n_cells: usize,
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub expect: FpExpect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct QuantumExpect {
    /// Bound on the total-norm drift.
    pub norm_tolerance: Option<f64>,
    /// Bound on each channel's drift from its initial norm.
    pub channel_tolerance: Option<f64>,
    /// `Â₁₂` at least this many standard errors above zero.
    pub min_significance: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumBlock {
    pub grid: GridSpec,
    #[serde(default)]
    pub coupling: CouplingSpec,
    /// `[re, im]`.
    pub c1: [f64; 2],
    pub c2: [f64; 2],
    pub packet: GaussianPacket,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Estimate `Â` from increments over this many recorded samples.
    pub correlation_window: Option<usize>,
    #[serde(default = "default_true")]
    pub wkb: bool,
    #[serde(default)]
    pub expect: QuantumExpect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlock {
    pub p0: Vec<f64>,
    pub model: ModelBlock,
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub step: StepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentBlock {
    pub weight: f64,
    pub synthetic: Option<SyntheticBlock>,
    pub quantum: Option<QuantumBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MixtureExpect {
    pub combined_variance: Option<Vec<f64>>,
    pub variance_rel_tol: Option<f64>,
    /// Checks the ensemble driven by the equivalent pair model against the
    /// combined initial norms.
    pub born_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureBlock {
    /// Interval over which increment variances are measured.
    pub interval: f64,
    pub components: Vec<ComponentBlock>,
    /// When set, run this many trajectories of the equivalent pair model.
    pub born_trajectories: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub expect: MixtureExpect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BridgeExpect {
    pub born_sigma: Option<f64>,
    pub min_significance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeBlock {
    pub quantum: QuantumBlock,
    pub window: usize,
    pub trajectories: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub expect: BridgeExpect,
}

/// The scenario document as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: ScenarioKind,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fokker_planck: Option<FpBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantum: Option<QuantumBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge: Option<BridgeBlock>,
}

struct QuantumPlan {
    grid: GridSpec,
    spec: CouplingSpec,
    state: TwoChannelState,
    evolve: EvolveConfig,
}

enum ComponentPlan {
    Synthetic { p0: NormVector, model: CorrelationModel, dt: f64, steps: usize, step: StepConfig },
    Quantum(QuantumPlan),
}

enum Plan {
    Diffusion { p0: NormVector, model: CorrelationModel },
    FokkerPlanck { grid: FpGrid, solve: SolveConfig },
    Quantum(QuantumPlan),
    Mixture { components: Vec<(f64, ComponentPlan)> },
    Bridge { quantum: QuantumPlan, p0: NormVector },
}

/// A parsed and fully validated scenario.
pub struct Scenario {
    file: ScenarioFile,
    plan: Plan,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario").field("file", &self.file).finish_non_exhaustive()
    }
}

fn norm_vector(values: &[f64], field: &str) -> Result<NormVector, ScenarioError> {
    NormVector::new(values.to_vec()).map_err(|e| invalid(field)(e.into()))
}

fn check_positive(value: f64, field: &str) -> Result<(), ScenarioError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::Config(format!("`{field}` must be a finite positive number, got {value}")))
    }
}

fn check_count(value: usize, field: &str) -> Result<(), ScenarioError> {
    if value == 0 {
        Err(ScenarioError::Config(format!("`{field}` must be >= 1")))
    } else {
        Ok(())
    }
}

fn quantum_plan(block: &QuantumBlock, field: &str) -> Result<QuantumPlan, ScenarioError> {
    let grid = block.grid;
    grid.validate().map_err(|e| invalid(field)(e.into()))?;
    let c1 = Complex64::new(block.c1[0], block.c1[1]);
    let c2 = Complex64::new(block.c2[0], block.c2[1]);
    let state = quantum::init_state(c1, c2, block.packet, &grid).map_err(|e| invalid(field)(e.into()))?;
    if !(block.dt.is_finite() && block.dt != 0.0) {
        return Err(ScenarioError::Config(format!("`{field}.dt` must be finite and nonzero")));
    }
    check_count(block.record_every, &format!("{field}.record_every"))?;
    // Builds the propagator once to validate the coupling on the grid.
    quantum::Propagator::new(&grid, &block.coupling, block.dt).map_err(|e| invalid(field)(e.into()))?;
    if let Some(w) = block.correlation_window {
        check_count(w, &format!("{field}.correlation_window"))?;
    }
    let evolve = EvolveConfig { dt: block.dt, n_steps: block.n_steps, record_every: block.record_every, snapshot_every: None };
    Ok(QuantumPlan { grid, spec: block.coupling, state, evolve })
}

fn require<'a, T>(block: &'a Option<T>, key: &str) -> Result<&'a T, ScenarioError> {
    block.as_ref().ok_or_else(|| ScenarioError::Config(format!("missing `[{key}]` block")))
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Scenario::from_file(file)
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let present = [
            ("diffusion", file.diffusion.is_some()),
            ("fokker_planck", file.fokker_planck.is_some()),
            ("quantum", file.quantum.is_some()),
            ("mixture", file.mixture.is_some()),
            ("bridge", file.bridge.is_some()),
        ];
        let own = match file.kind {
            ScenarioKind::Diffusion => "diffusion",
            ScenarioKind::FokkerPlanck => "fokker_planck",
            ScenarioKind::Quantum => "quantum",
            ScenarioKind::Mixture => "mixture",
            ScenarioKind::Bridge => "bridge",
        };
        if let Some((name, _)) = present.iter().find(|(name, set)| *set && *name != own) {
            return Err(ScenarioError::Config(format!("`[{name}]` block does not belong to a {} scenario", file.kind.name())));
        }
        let plan = match file.kind {
            ScenarioKind::Diffusion => {
                let b = require(&file.diffusion, "diffusion")?;
                let p0 = norm_vector(&b.p0, "diffusion.p0")?;
                let model = b.model.build(p0.len(), "diffusion.model")?;
                check_count(b.trajectories, "diffusion.trajectories")?;
                check_positive(b.dt, "diffusion.dt")?;
                check_positive(b.t_max, "diffusion.t_max")?;
                Plan::Diffusion { p0, model }
            }
            ScenarioKind::FokkerPlanck => {
                let b = require(&file.fokker_planck, "fokker_planck")?;
                let grid = FpGrid::from_pair_coefficient(b.n_cells, b.a).map_err(|e| invalid("fokker_planck")(e.into()))?;
                if !(b.x0 > 0.0 && b.x0 < 1.0) {
                    return Err(invalid("fokker_planck.x0")(FpError::BadInitialPosition(b.x0).into()));
                }
                check_positive(b.t_end, "fokker_planck.t_end")?;
                check_positive(b.dt, "fokker_planck.dt")?;
                if b.scheme == Scheme::Explicit && b.dt > grid.explicit_dt_bound() {
                    let e = FpError::UnstableStep { dt: b.dt, bound: grid.explicit_dt_bound() };
                    return Err(invalid("fokker_planck.dt")(e.into()));
                }
                let solve = SolveConfig { t_end: b.t_end, dt: b.dt, scheme: b.scheme, snapshot_every: b.snapshot_every };
                Plan::FokkerPlanck { grid, solve }
            }
            ScenarioKind::Quantum => Plan::Quantum(quantum_plan(require(&file.quantum, "quantum")?, "quantum")?),
            ScenarioKind::Mixture => {
                let b = require(&file.mixture, "mixture")?;
                check_positive(b.interval, "mixture.interval")?;
                if b.components.is_empty() {
                    return Err(invalid("mixture.components")(MixtureError::Empty.into()));
                }
                let mut components = Vec::with_capacity(b.components.len());
                for (i, c) in b.components.iter().enumerate() {
                    let field = format!("mixture.components[{i}]");
                    if !(c.weight.is_finite() && c.weight >= 0.0) {
                        return Err(invalid(&field)(MixtureError::InvalidWeight { index: i, value: c.weight }.into()));
                    }
                    let plan = match (&c.synthetic, &c.quantum) {
                        (Some(s), None) => {
                            let p0 = norm_vector(&s.p0, &field)?;
                            let model = s.model.build(p0.len(), &field)?;
                            check_positive(s.dt, &format!("{field}.synthetic.dt"))?;
                            ComponentPlan::Synthetic { p0, model, dt: s.dt, steps: s.steps, step: s.step }
                        }
                        (None, Some(q)) => ComponentPlan::Quantum(quantum_plan(q, &field)?),
                        _ => {
                            return Err(ScenarioError::Config(format!("{field}: give exactly one of `synthetic` or `quantum`")))
                        }
                    };
                    components.push((c.weight, plan));
                }
                let total: f64 = components.iter().map(|(w, _)| w).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid("mixture.components")(MixtureError::WeightsNotNormalized(total).into()));
                }
                if let Some(n) = b.born_trajectories {
                    check_count(n, "mixture.born_trajectories")?;
                }
                Plan::Mixture { components }
            }
            ScenarioKind::Bridge => {
                let b = require(&file.bridge, "bridge")?;
                let quantum = quantum_plan(&b.quantum, "bridge.quantum")?;
                check_count(b.window, "bridge.window")?;
                check_count(b.trajectories, "bridge.trajectories")?;
                check_positive(b.dt, "bridge.dt")?;
                check_positive(b.t_max, "bridge.t_max")?;
                let (a, c) = quantum.state.norms(&quantum.grid);
                let p0 = norm_vector(&[a, c], "bridge.quantum.c1")?;
                Plan::Bridge { quantum, p0 }
            }
        };
        Ok(Self { file, plan })
    }

    pub fn kind(&self) -> ScenarioKind {
        self.file.kind
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    /// Replaces the seed from the file.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.file.seed = seed;
        self
    }
}

/// One declared tolerance and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, expected, tolerance, passed: (value - expected).abs() <= tolerance }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, expected: 0.0, tolerance: limit, passed: value <= limit }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, expected: limit, tolerance: 0.0, passed: value >= limit }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub scenario: ScenarioFile,
    pub results: Value,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub format: Format,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl RunOptions {
    /// Output directory and format precedence: explicit arguments, then the
    /// scenario's `[output]` block, then `out/<kind>` and `csv`.
    pub fn resolve(scenario: &Scenario, out_dir: Option<PathBuf>, format: Option<Format>, threads: Option<usize>) -> Self {
        let file = scenario.file();
        Self {
            out_dir: out_dir
                .or_else(|| file.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(file.kind.name())),
            format: format.or(file.output.format).unwrap_or_default(),
            threads,
        }
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    csv: bool,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn write<F>(&mut self, name: &str, body: F) -> Result<(), ScenarioError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let io = |source| ScenarioError::Io { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        body(&mut w).and_then(|_| w.flush()).map_err(io)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn csv<F>(&mut self, name: &str, body: F) -> Result<(), ScenarioError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        if self.csv { self.write(name, body) } else { Ok(()) }
    }
}

fn write_trajectories<W: Write>(records: &[AbsorptionRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "trajectory_id,winner,hitting_time,steps")?;
    for (i, r) in records.iter().enumerate() {
        let winner = r.winner.map(|w| w.to_string()).unwrap_or_default();
        writeln!(out, "{i},{winner},{},{}", r.hitting_time, r.steps)?;
    }
    Ok(())
}

fn born_checks(checks: &mut Vec<Check>, prefix: &str, report: &BornReport, p0: &[f64], expect: &BornExpect) {
    if let Some(k) = expect.born_sigma {
        let n = report.n_completed().max(1) as f64;
        for (j, (&f, &p)) in report.frequencies.iter().zip(p0).enumerate() {
            let se = (p * (1.0 - p) / n).sqrt();
            checks.push(Check::within(format!("{prefix}frequency[{j}]"), f, p, k * se));
        }
    }
    if let Some(expected) = expect.mean_hitting_time {
        let tol = expect.hitting_time_rel_tol.unwrap_or(0.05) * expected.abs();
        checks.push(Check::within(format!("{prefix}mean_hitting_time"), report.mean_hitting_time, expected, tol));
    }
}

#[derive(Serialize)]
struct DiffusionResults<'a> {
    p0: &'a [f64],
    model: &'static str,
    report: &'a BornReport,
    hitting_time_standard_error: f64,
}

#[derive(Serialize)]
struct FpResults {
    x0: f64,
    a: f64,
    n_cells: usize,
    absorbed_mass_0: f64,
    absorbed_mass_1: f64,
    interior_mass: f64,
    max_mass_defect: f64,
    smallest_eigenvalue: f64,
    inverse_smallest_eigenvalue: f64,
    exact_mean_hitting_time: f64,
    decay_rate: Option<f64>,
}

#[derive(Serialize)]
struct QuantumResults {
    pointer: bool,
    final_p1: f64,
    final_p2: f64,
    max_norm_drift: f64,
    max_channel_drift: f64,
    edge_flagged: bool,
    correlations: Option<crate::series::CorrelationEstimate>,
    wkb: Option<quantum::WkbDiagnostic>,
}

#[derive(Serialize)]
struct MixtureResults {
    weights: Vec<f64>,
    combined_initial: Vec<f64>,
    combined_final: Vec<f64>,
    component_variances: Vec<Vec<f64>>,
    combined_variance: Vec<f64>,
    equivalent_pair_coefficient: Option<f64>,
    born: Option<BornReport>,
}

#[derive(Serialize)]
struct BridgeResults {
    quantum: QuantumResults,
    estimated_a12: f64,
    estimated_a12_standard_error: f64,
    p0: Vec<f64>,
    born: BornReport,
}

fn run_quantum(
    plan: &QuantumPlan,
    block: &QuantumBlock,
    context: &str,
) -> Result<(quantum::Evolution, QuantumResults), ScenarioError> {
    let ev = quantum::evolve(&plan.state, &plan.spec, &plan.grid, &plan.evolve).map_err(|e| runtime(context)(e.into()))?;
    let correlations = match block.correlation_window {
        Some(w) => Some(estimate_correlations(&ev.norm_series(), w).map_err(|e| runtime(context)(e.into()))?),
        None => None,
    };
    let wkb = if block.wkb {
        let th = quantum::default_threshold(&ev.final_state);
        Some(quantum::wkb_diagnostic(&ev.final_state, &plan.spec, &plan.grid, th).map_err(|e| runtime(context)(e.into()))?)
    } else {
        None
    };
    let results = QuantumResults {
        pointer: plan.spec.is_pointer(),
        final_p1: *ev.p1.last().unwrap(),
        final_p2: *ev.p2.last().unwrap(),
        max_norm_drift: ev.max_norm_drift,
        max_channel_drift: ev.max_channel_drift(),
        edge_flagged: ev.edge_flagged,
        correlations,
        wkb,
    };
    Ok((ev, results))
}

fn quantum_checks(checks: &mut Vec<Check>, prefix: &str, r: &QuantumResults, expect: &QuantumExpect) {
    if let Some(tol) = expect.norm_tolerance {
        checks.push(Check::at_most(format!("{prefix}total_norm_drift"), r.max_norm_drift, tol));
    }
    if let Some(tol) = expect.channel_tolerance {
        checks.push(Check::at_most(format!("{prefix}channel_drift"), r.max_channel_drift, tol));
    }
    if let (Some(k), Some(c)) = (expect.min_significance, &r.correlations) {
        checks.push(Check::at_least(format!("{prefix}a12_significance"), c.significance(0, 1), k));
    }
}

fn ensemble_config(n: usize, dt: f64, t_max: f64, seed: u64, step: StepConfig) -> EnsembleConfig {
    EnsembleConfig { n, dt, t_max, seed, step }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialise")
}

fn execute(scenario: &Scenario, out: &mut Outputs<'_>) -> Result<(Value, Vec<Check>), ScenarioError> {
    let file = &scenario.file;
    let seed = file.seed;
    let mut checks = Vec::new();
    let results = match &scenario.plan {
        Plan::Diffusion { p0, model } => {
            let b = file.diffusion.as_ref().expect("validated");
            let cfg = ensemble_config(b.trajectories, b.dt, b.t_max, seed, b.step);
            let records = run_ensemble_records(p0, model, &cfg).map_err(|e| runtime("diffusion ensemble")(e.into()))?;
            let report = BornReport::from_records(p0.len(), &records);
            out.csv("trajectories.csv", |w| write_trajectories(&records, w))?;
            born_checks(&mut checks, "", &report, p0.values(), &b.expect);
            to_value(&DiffusionResults {
                p0: p0.values(),
                model: model.kind(),
                hitting_time_standard_error: report.hitting_time_standard_error(),
                report: &report,
            })
        }
        Plan::FokkerPlanck { grid, solve } => {
            let b = file.fokker_planck.as_ref().expect("validated");
            let sol = fp::solve(grid, b.x0, solve).map_err(|e| runtime("fokker-planck solve")(e.into()))?;
            let lambda = fp::smallest_eigenvalue(&fp::build_generator(grid)).map_err(|e| runtime("eigenvalue")(e.into()))?;
            let decay_rate = fp::survival_decay_rate(&sol).ok();
            out.csv("density.csv", |w| sol.write_density_csv(w))?;
            out.csv("absorbed.csv", |w| sol.write_absorbed_csv(w))?;
            if let Some(tol) = b.expect.split_tolerance {
                checks.push(Check::within("absorbed_mass_0", sol.absorbed_mass_0(), 1.0 - b.x0, tol));
                checks.push(Check::within("absorbed_mass_1", sol.absorbed_mass_1(), b.x0, tol));
            }
            if let Some(tol) = b.expect.mass_tolerance {
                checks.push(Check::at_most("mass_defect", sol.max_mass_defect(), tol));
            }
            if let Some(rel) = b.expect.decay_rel_tol {
                checks.push(Check::within("decay_rate", decay_rate.unwrap_or(f64::NAN), lambda, rel * lambda));
            }
            to_value(&FpResults {
                x0: b.x0,
                a: b.a,
                n_cells: b.n_cells,
                absorbed_mass_0: sol.absorbed_mass_0(),
                absorbed_mass_1: sol.absorbed_mass_1(),
                interior_mass: sol.final_interior_mass(),
                max_mass_defect: sol.max_mass_defect(),
                smallest_eigenvalue: lambda,
                inverse_smallest_eigenvalue: 1.0 / lambda,
                exact_mean_hitting_time: b.x0 * (1.0 - b.x0) / b.a,
                decay_rate,
            })
        }
        Plan::Quantum(plan) => {
            let b = file.quantum.as_ref().expect("validated");
            let (ev, results) = run_quantum(plan, b, "quantum evolution")?;
            out.csv("norms.csv", |w| ev.write_norm_csv(w))?;
            out.csv("final_state.csv", |w| ev.final_state.write_csv(&plan.grid, w))?;
            quantum_checks(&mut checks, "", &results, &b.expect);
            to_value(&results)
        }
        Plan::Mixture { components } => {
            let b = file.mixture.as_ref().expect("validated");
            let mut parts = Vec::with_capacity(components.len());
            for (i, (weight, plan)) in components.iter().enumerate() {
                let series = match plan {
                    ComponentPlan::Synthetic { p0, model, dt, steps, step } => {
                        let mut rng = stream_rng(seed, i as u64);
                        sample_path(p0, model, *dt, *steps, &mut rng, *step).map_err(|e| runtime("mixture component")(e.into()))?
                    }
                    ComponentPlan::Quantum(q) => quantum::evolve(&q.state, &q.spec, &q.grid, &q.evolve)
                        .map_err(|e| runtime("mixture component")(e.into()))?
                        .norm_series(),
                };
                parts.push(Component { weight: *weight, series });
            }
            let ensemble = Ensemble::new(parts).map_err(|e| runtime("mixture ensemble")(e.into()))?;
            let combined = mixture::combine_norms(&ensemble);
            let component_variances =
                mixture::component_variances(&ensemble, b.interval).map_err(|e| runtime("mixture variance")(e.into()))?;
            let combined_variance = mixture::combine_variances(&ensemble.weights(), &component_variances);
            out.csv("combined_norms.csv", |w| {
                let header: Vec<String> = (1..=combined.channels()).map(|j| format!("p{j}")).collect();
                writeln!(w, "t,{}", header.join(","))?;
                for (t, v) in combined.times().iter().zip(combined.values()) {
                    let row: Vec<String> = v.iter().map(f64::to_string).collect();
                    writeln!(w, "{t},{}", row.join(","))?;
                }
                Ok(())
            })?;
            let mut equivalent = None;
            let mut born = None;
            if combined.channels() == 2 {
                let model = mixture::equivalent_pair_model(&combined_variance, b.interval)
                    .map_err(|e| runtime("equivalent model")(e.into()))?;
                if let CorrelationModel::Constant { coefficients } = &model {
                    equivalent = Some(coefficients.get(0, 1));
                }
                if let Some(n) = b.born_trajectories {
                    let p0 = norm_vector(&combined.values()[0], "mixture")?;
                    let cfg = ensemble_config(n, b.dt, b.t_max, seed, StepConfig::default());
                    let records = run_ensemble_records(&p0, &model, &cfg).map_err(|e| runtime("mixture ensemble")(e.into()))?;
                    let report = BornReport::from_records(2, &records);
                    let expect = BornExpect { born_sigma: b.expect.born_sigma, ..Default::default() };
                    born_checks(&mut checks, "born_", &report, p0.values(), &expect);
                    born = Some(report);
                }
            }
            if let Some(expected) = &b.expect.combined_variance {
                let rel = b.expect.variance_rel_tol.unwrap_or(0.0);
                for (j, (&v, &e)) in combined_variance.iter().zip(expected).enumerate() {
                    checks.push(Check::within(format!("combined_variance[{j}]"), v, e, rel * e.abs()));
                }
            }
            to_value(&MixtureResults {
                weights: ensemble.weights(),
                combined_initial: combined.values()[0].clone(),
                combined_final: combined.values()[combined.len() - 1].clone(),
                component_variances,
                combined_variance,
                equivalent_pair_coefficient: equivalent,
                born,
            })
        }
        Plan::Bridge { quantum: plan, p0 } => {
            let b = file.bridge.as_ref().expect("validated");
            let mut qblock = b.quantum.clone();
            qblock.correlation_window = Some(b.window);
            let (ev, qres) = run_quantum(plan, &qblock, "bridge quantum evolution")?;
            let est = qres.correlations.clone().expect("window set");
            let a12 = est.a[0][1];
            let model = PairMatrix::new(vec![vec![0.0, a12], vec![a12, 0.0]])
                .map(CorrelationModel::constant)
                .map_err(|e| runtime("bridge model")(e.into()))?;
            let cfg = ensemble_config(b.trajectories, b.dt, b.t_max, seed, b.step);
            let records = run_ensemble_records(p0, &model, &cfg).map_err(|e| runtime("bridge ensemble")(e.into()))?;
            let report = BornReport::from_records(2, &records);
            out.csv("norms.csv", |w| ev.write_norm_csv(w))?;
            out.csv("trajectories.csv", |w| write_trajectories(&records, w))?;
            born_checks(
                &mut checks,
                "",
                &report,
                p0.values(),
                &BornExpect { born_sigma: b.expect.born_sigma, ..Default::default() },
            );
            if let Some(k) = b.expect.min_significance {
                checks.push(Check::at_least("a12_significance", est.significance(0, 1), k));
            }
            to_value(&BridgeResults {
                quantum: qres,
                estimated_a12: a12,
                estimated_a12_standard_error: est.standard_error[0][1],
                p0: p0.values().to_vec(),
                born: report,
            })
        }
    };
    Ok((results, checks))
}

/// Runs a scenario, writing its files into `options.out_dir`.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<Summary, ScenarioError> {
    let dir = &options.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io { path: dir.clone(), source })?;
    let mut out = Outputs { dir, csv: options.format == Format::Csv, files: Vec::new() };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ScenarioError::Config(format!("thread pool: {e}")))?;
    let (results, checks) = pool.install(|| execute(scenario, &mut out))?;
    let passed = checks.iter().all(|c| c.passed);
    let mut files = out.files.clone();
    files.push("summary.json".into());
    let summary = Summary {
        schema: SUMMARY_SCHEMA,
        kind: scenario.kind(),
        seed: scenario.seed(),
        scenario: scenario.file.clone(),
        results,
        checks,
        passed,
        files,
    };
    out.write("summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "diffusion"
seed = 42

[diffusion]
p0 = [0.3, 0.7]
model = { kind = "constant", a = 1.0 }
trajectories = 1000
"#;

    #[test]
    fn minimal_diffusion_scenario_parses() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.kind(), ScenarioKind::Diffusion);
        assert_eq!(s.seed(), 42);
    }

    #[test]
    fn unnormalized_p0_is_a_validation_error() {
        let text = MINIMAL.replace("[0.3, 0.7]", "[0.5, 0.6]");
        match parse_scenario(&text) {
            Err(ScenarioError::Validation { source: ModuleError::Simplex(SimplexError::NotNormalized { .. }), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_names_the_key() {
        let text = MINIMAL.replace("trajectories", "trajectorys");
        match parse_scenario(&text) {
            Err(e @ ScenarioError::Parse(_)) => {
                let msg = e.to_string();
                assert!(msg.contains("trajectorys"), "{msg}");
                assert!(msg.contains("line"), "{msg}");
                assert_eq!(e.exit_code(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreign_block_is_rejected() {
        let text = format!("{MINIMAL}\n[fokker_planck]\nx0 = 0.3\na = 1.0\nt_end = 1.0\n");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn missing_block_is_rejected() {
        assert!(matches!(parse_scenario("kind = \"quantum\"\nseed = 1\n"), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn model_needs_exactly_one_coefficient_source() {
        let text = MINIMAL.replace("a = 1.0", "a = 1.0, coefficients = [[0.0, 1.0], [1.0, 0.0]]");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Config(_))));
    }
}
