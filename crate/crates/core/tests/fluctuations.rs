use brownian_reduction::mixture::{combine_fluctuation_variance, combine_variances, equivalent_pair_model, Component, Ensemble};
use brownian_reduction::rng::stream_rng;
use brownian_reduction::series::estimate_correlations;
use brownian_reduction::simplex::{sample_path, CorrelationModel, NormVector, PairMatrix, StepConfig};
use brownian_reduction::verify::mixture_statistics;

#[test]
fn synthetic_pair_coefficient_is_recovered() {
    let a = 0.8;
    let p0 = NormVector::new(vec![0.5, 0.5]).unwrap();
    let model = CorrelationModel::uniform(2, a).unwrap();
    for seed in 0..4 {
        let series = sample_path(&p0, &model, 1e-6, 20_000, &mut stream_rng(seed, 0), StepConfig::default()).unwrap();
        let est = estimate_correlations(&series, 1).unwrap();
        assert!((est.a[0][1] - a).abs() <= 0.1 * a, "seed {seed}: {}", est.a[0][1]);
        assert_eq!(est.a[0][1], est.a[1][0]);
        assert!(est.significance(0, 1) > 10.0);
    }
}

#[test]
fn three_channel_coefficients_are_recovered() {
    let rows = vec![vec![0.0, 0.4, 1.2], vec![0.4, 0.0, 0.8], vec![1.2, 0.8, 0.0]];
    let model = CorrelationModel::constant(PairMatrix::new(rows.clone()).unwrap());
    let p0 = NormVector::new(vec![0.3, 0.3, 0.4]).unwrap();
    let series = sample_path(&p0, &model, 1e-7, 40_000, &mut stream_rng(9, 0), StepConfig::default()).unwrap();
    let est = estimate_correlations(&series, 1).unwrap();
    for (j, row) in rows.iter().enumerate() {
        for (k, &a) in row.iter().enumerate().filter(|&(k, _)| k != j) {
            assert!((est.a[j][k] - a).abs() <= 0.1 * a, "{j},{k}: {}", est.a[j][k]);
        }
    }
}

#[test]
fn combined_variance_matches_pooled_statistics() {
    for seed in [1, 2, 3] {
        let (combined, se, pooled, pooled_se) = mixture_statistics(seed).unwrap();
        assert!((combined - pooled).abs() <= 3.0 * se.hypot(pooled_se), "{combined} vs {pooled}");
        assert!((combined - 4e-7).abs() <= 3.0 * se, "{combined}");
    }
}

#[test]
fn worked_mixture_value_is_exact() {
    assert_eq!(combine_variances(&[0.25, 0.75], &[vec![4e-4, 4e-4], vec![0.0, 0.0]]), vec![1e-4, 1e-4]);
}

#[test]
fn equivalent_model_reproduces_the_combined_variance() {
    let dt = 1e-6;
    let p0 = NormVector::new(vec![0.5, 0.5]).unwrap();
    let parts = [(0.4, 0.5), (0.6, 1.5)]
        .into_iter()
        .enumerate()
        .map(|(i, (w, a))| {
            let model = CorrelationModel::uniform(2, a).unwrap();
            let series = sample_path(&p0, &model, dt, 20_000, &mut stream_rng(5, i as u64), StepConfig::default()).unwrap();
            Component { weight: w, series }
        })
        .collect();
    let ens = Ensemble::new(parts).unwrap();
    let var = combine_fluctuation_variance(&ens, dt).unwrap();
    let CorrelationModel::Constant { coefficients } = equivalent_pair_model(&var, dt).unwrap() else {
        panic!("expected a constant model")
    };
    let expected = 0.4 * 0.5 + 0.6 * 1.5;
    assert!((coefficients.get(0, 1) - expected).abs() <= 0.05 * expected, "{}", coefficients.get(0, 1));
}
