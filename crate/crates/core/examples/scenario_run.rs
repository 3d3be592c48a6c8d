//! Runs a scenario file the way the CLI does.
//!
//! cargo run --release --example scenario_run -- scenarios/fokker_planck.toml out/fp

use std::path::PathBuf;

use brownian_reduction::scenario::{parse_scenario, run_scenario, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "scenarios/fokker_planck.toml".into());
    let out = args.next().map(PathBuf::from);
    let scenario = parse_scenario(&std::fs::read_to_string(&path)?)?;
    let opts = RunOptions::resolve(&scenario, out, None, None);
    let summary = run_scenario(&scenario, &opts)?;
    println!("{}", serde_json::to_string_pretty(&summary.results)?);
    for c in &summary.checks {
        println!("{} {}", if c.passed { "pass" } else { "FAIL" }, c.name);
    }
    Ok(())
}
