use std::path::{Path, PathBuf};

use brownian_reduction::scenario::{parse_scenario, run_scenario, Format, RunOptions, ScenarioError, Summary};
use brownian_reduction::verify::{rerun_identical, DETERMINISM_SCENARIOS};
use serde_json::Value;

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn load(name: &str) -> String {
    std::fs::read_to_string(scenario_dir().join(name)).unwrap()
}

fn run(text: &str, dir: &Path, format: Format) -> Summary {
    let s = parse_scenario(text).unwrap();
    run_scenario(&s, &RunOptions { out_dir: dir.to_path_buf(), format, threads: Some(2) }).unwrap()
}

fn validator() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/summary.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, dir: &Path) {
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let errors: Vec<String> = v.iter_errors(&summary).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", dir.display());
}

#[test]
fn shipped_scenarios_pass_and_match_the_schema() {
    let v = validator();
    let tmp = tempfile::tempdir().unwrap();
    let mut names: Vec<_> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in names {
        let dir = tmp.path().join(&name);
        let summary = run(&load(&name), &dir, Format::Csv);
        assert!(summary.passed, "{name}: {:?}", summary.checks);
        assert!(!summary.checks.is_empty(), "{name} declares no tolerance");
        assert_valid(&v, &dir);
        for f in &summary.files {
            assert!(dir.join(f).is_file(), "{name}: missing {f}");
        }
    }
}

#[test]
fn csv_headers_are_fixed() {
    let tmp = tempfile::tempdir().unwrap();
    let header = |dir: &Path, f: &str| std::fs::read_to_string(dir.join(f)).unwrap().lines().next().unwrap().to_string();
    let d = tmp.path().join("d");
    run(DETERMINISM_SCENARIOS[0].1, &d, Format::Csv);
    assert_eq!(header(&d, "trajectories.csv"), "trajectory_id,winner,hitting_time,steps");
    let f = tmp.path().join("f");
    run(DETERMINISM_SCENARIOS[1].1, &f, Format::Csv);
    assert_eq!(header(&f, "density.csv"), "t,x,density");
    assert_eq!(header(&f, "absorbed.csv"), "t,mass0,mass1");
    let q = tmp.path().join("q");
    run(&load("pointer.toml"), &q, Format::Csv);
    assert_eq!(header(&q, "norms.csv"), "t,p1,p2,total_norm");
}

#[test]
fn json_summary_format_writes_only_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run(DETERMINISM_SCENARIOS[1].1, tmp.path(), Format::JsonSummary);
    assert_eq!(summary.files, vec!["summary.json".to_string()]);
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn fokker_planck_split_follows_the_start_point() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run(&load("fokker_planck.toml"), tmp.path(), Format::JsonSummary);
    let r = &summary.results;
    assert!((r["absorbed_mass_0"].as_f64().unwrap() - 0.7).abs() <= 1e-3);
    assert!((r["absorbed_mass_1"].as_f64().unwrap() - 0.3).abs() <= 1e-3);
    assert!((r["exact_mean_hitting_time"].as_f64().unwrap() - 0.21).abs() < 1e-12);
    let lambda = r["smallest_eigenvalue"].as_f64().unwrap();
    assert!((r["inverse_smallest_eigenvalue"].as_f64().unwrap() * lambda - 1.0).abs() < 1e-12);
}

#[test]
fn bridge_frequencies_follow_the_quantum_norms() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run(&load("bridge.toml"), tmp.path(), Format::JsonSummary);
    let r = &summary.results;
    let a12 = r["estimated_a12"].as_f64().unwrap();
    assert!(a12 > 3.0 * r["estimated_a12_standard_error"].as_f64().unwrap());
    let n = r["born"]["n_trajectories"].as_f64().unwrap();
    for (j, p) in [0.36, 0.64].into_iter().enumerate() {
        assert!((r["p0"][j].as_f64().unwrap() - p).abs() < 1e-9);
        let f = r["born"]["frequencies"][j].as_f64().unwrap();
        assert!((f - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt(), "channel {j}: {f}");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    for (label, text) in DETERMINISM_SCENARIOS {
        assert!(rerun_identical(text, tmp.path(), label).unwrap(), "{label}");
    }
}

#[test]
fn same_seed_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let text = load("born_four_channel.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&text, &a, Format::Csv);
    run(&text, &b, Format::Csv);
    for f in ["summary.json", "trajectories.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let s = parse_scenario(DETERMINISM_SCENARIOS[0].1).unwrap().with_seed(99);
    let summary = run_scenario(&s, &RunOptions { out_dir: tmp.path().into(), format: Format::Csv, threads: None }).unwrap();
    assert_eq!(summary.seed, 99);
    assert_eq!(summary.scenario.seed, 99);
}

#[test]
fn failing_tolerance_is_reported_not_raised() {
    let tmp = tempfile::tempdir().unwrap();
    let text = load("born_two_channel.toml").replace("mean_hitting_time = 0.21", "mean_hitting_time = 0.5");
    let summary = run(&text, tmp.path(), Format::JsonSummary);
    assert!(!summary.passed);
    assert!(summary.checks.iter().any(|c| c.name == "mean_hitting_time" && !c.passed));
}

#[test]
fn parse_errors_are_configuration_errors() {
    let base = load("born_two_channel.toml");
    let cases = [
        base.replace("trajectories", "trajectorys"),
        base.replace("[0.3, 0.7]", "[0.3, 0.8]"),
        base.replace("kind = \"constant\"", "kind = \"quadratic\""),
        base.replace("seed = 42", "seed = -1"),
        base.replace("trajectories = 20000", "trajectories = 0"),
        load("rabi.toml").replace("n_points = 256", "n_points = 300"),
        load("fokker_planck.toml").replace("x0 = 0.3", "x0 = 1.3"),
        load("mixture.toml").replace("weight = 0.75", "weight = 0.7"),
    ];
    for text in cases {
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
    match parse_scenario(&base.replace("trajectories", "trajectorys")) {
        Err(ScenarioError::Parse(msg)) => assert!(msg.contains("trajectorys") && msg.contains("line")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let s = parse_scenario(DETERMINISM_SCENARIOS[1].1).unwrap();
    let err = run_scenario(&s, &RunOptions { out_dir: blocker.join("sub"), format: Format::Csv, threads: None }).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }));
    assert_eq!(err.exit_code(), 3);
}
