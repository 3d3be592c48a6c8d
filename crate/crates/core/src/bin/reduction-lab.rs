use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use brownian_reduction::scenario::{self, Format, RunOptions, ScenarioKind};
use brownian_reduction::verify::{self, VerifyOptions};

/// Simulations of state reduction as absorbing diffusion of channel norms.
#[derive(Parser)]
#[command(name = "reduction-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo ensemble on the simplex.
    SimulateDiffusion(RunArgs),
    /// Fokker-Planck density with absorbing walls.
    SolveFp(RunArgs),
    /// Two-channel Schrödinger evolution.
    EvolveQuantum(RunArgs),
    /// Weighted ensemble of norm trajectories.
    Mixture(RunArgs),
    /// Quantum run feeding an estimated correlation into a diffusion ensemble.
    Bridge(RunArgs),
    /// Runs the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    JsonSummary,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::JsonSummary => Format::JsonSummary,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the seed in the file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keeps the determinism reruns and writes `verify.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: RunArgs, expected: ScenarioKind) -> ExitCode {
    let text = match std::fs::read_to_string(&args.scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.scenario.display());
            return ExitCode::from(2);
        }
    };
    let mut scenario = match scenario::parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", args.scenario.display());
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if scenario.kind() != expected {
        eprintln!("error: scenario kind is `{}`, this subcommand runs `{}`", scenario.kind().name(), expected.name());
        return ExitCode::from(2);
    }
    if let Some(seed) = args.seed {
        scenario = scenario.with_seed(seed);
    }
    let options = RunOptions::resolve(&scenario, args.out, args.format.map(Into::into), args.threads);
    match scenario::run_scenario(&scenario, &options) {
        Ok(summary) => {
            for c in &summary.checks {
                let verdict = if c.passed { "pass" } else { "FAIL" };
                println!("{verdict} {}: {} (expected {} ± {})", c.name, c.value, c.expected, c.tolerance);
            }
            println!("wrote {} file(s) to {}", summary.files.len(), options.out_dir.display());
            if summary.passed { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_verify(args: VerifyArgs) -> ExitCode {
    let mut opts = VerifyOptions { seed: args.seed, ..Default::default() };
    if let Some(dir) = &args.out {
        opts.work_dir = dir.clone();
    }
    if let Err(e) = std::fs::create_dir_all(&opts.work_dir) {
        eprintln!("error: cannot create {}: {e}", opts.work_dir.display());
        return ExitCode::from(3);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let results = pool.install(|| verify::run_all(&opts, |r| println!("{r}")));
    if args.out.is_some() {
        let path = opts.work_dir.join("verify.json");
        let body = serde_json::to_string_pretty(&results).expect("results serialise");
        if let Err(e) = std::fs::write(&path, body + "\n") {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(3);
        }
    } else {
        let _ = std::fs::remove_dir_all(&opts.work_dir);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) }
}

fn main() -> ExitCode {
    env_logger::init();
    match Cli::parse().command {
        Command::SimulateDiffusion(a) => run(a, ScenarioKind::Diffusion),
        Command::SolveFp(a) => run(a, ScenarioKind::FokkerPlanck),
        Command::EvolveQuantum(a) => run(a, ScenarioKind::Quantum),
        Command::Mixture(a) => run(a, ScenarioKind::Mixture),
        Command::Bridge(a) => run(a, ScenarioKind::Bridge),
        Command::Verify(a) => run_verify(a),
    }
}
