use brownian_reduction::quantum::{
    default_threshold, evolve, init_state, wkb_diagnostic, CouplingSpec, EvolveConfig, Field, GaussianPacket, GridSpec,
    Potential,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid(n: usize) -> GridSpec {
    GridSpec::new(-20.0, 20.0, n).unwrap()
}

fn packet(center: f64, width: f64) -> GaussianPacket {
    GaussianPacket { center, width, momentum: 0.0 }
}

fn cfg(dt: f64, n_steps: usize, record_every: usize) -> EvolveConfig {
    EvolveConfig { dt, n_steps, record_every, snapshot_every: None }
}

#[test]
fn pointer_coupling_keeps_each_channel_norm() {
    let g = grid(256);
    let spec = CouplingSpec {
        potential: Potential::Harmonic { omega: 1.0 },
        lambda_z: Field::Linear { offset: -0.3, slope: 0.8 },
        ..Default::default()
    };
    let state = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.0, -0.8), packet(1.0, 0.7), &g).unwrap();
    let ev = evolve(&state, &spec, &g, &cfg(1e-3, 10_000, 50)).unwrap();
    assert!(ev.max_channel_drift() <= 1e-8, "{}", ev.max_channel_drift());
    assert!(ev.max_norm_drift <= 1e-8);
}

/// `φ₁(t) = c₁cos θ − i c₂ sin θ` with `θ = λt/ħ` for spatially constant `λ_x`.
#[test]
fn rabi_oscillation_for_general_amplitudes() {
    let cases = [
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), 0.5, 1.0),
        (Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8), 0.9, 0.5),
        (Complex64::new(0.0, 0.28), Complex64::new(0.96, 0.0), 0.3, 2.0),
    ];
    for (c1, c2, lambda, hbar) in cases {
        let g = grid(256).with_hbar(hbar).unwrap();
        let spec = CouplingSpec { lambda_x: Field::Constant { value: lambda }, ..Default::default() };
        let ev = evolve(&init_state(c1, c2, packet(0.0, 1.0), &g).unwrap(), &spec, &g, &cfg(1e-3, 4000, 20)).unwrap();
        for (&t, &p1) in ev.times.iter().zip(&ev.p1) {
            let th = lambda * t / hbar;
            let expected = (c1 * th.cos() - Complex64::i() * c2 * th.sin()).norm_sqr();
            assert!((p1 - expected).abs() <= 1e-6, "t = {t}: {p1} vs {expected}");
        }
    }
}

#[test]
fn time_reversal_recovers_the_initial_state() {
    let g = grid(256);
    let spec = CouplingSpec {
        potential: Potential::Harmonic { omega: 1.0 },
        lambda_x: Field::Linear { offset: 0.1, slope: 0.5 },
        lambda_y: Field::Constant { value: 0.2 },
        lambda_z: Field::Constant { value: -0.3 },
    };
    let start = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet(1.0, 0.8), &g).unwrap();
    let forward = evolve(&start, &spec, &g, &cfg(1e-2, 1000, 100)).unwrap();
    let back = evolve(&forward.final_state, &spec, &g, &cfg(-1e-2, 1000, 100)).unwrap().final_state;
    let err = start
        .phi1
        .iter()
        .zip(&back.phi1)
        .chain(start.phi2.iter().zip(&back.phi2))
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err <= 1e-7, "{err}");
}

#[test]
fn channel_norms_converge_with_the_grid() {
    let spec = CouplingSpec { lambda_x: Field::Linear { offset: 0.0, slope: 0.5 }, ..Default::default() };
    let run = |n| {
        let g = grid(n);
        let s = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet(2.0, 0.7), &g).unwrap();
        evolve(&s, &spec, &g, &cfg(1e-2, 2000, 100)).unwrap().p1
    };
    let (coarse, fine) = (run(256), run(512));
    let diff = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-8, "{diff}");
}

fn median_ratio(hbar: f64) -> f64 {
    let g = grid(512).with_hbar(hbar).unwrap();
    let spec = CouplingSpec { lambda_x: Field::Constant { value: 0.5 }, ..Default::default() };
    let state = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8), packet(1.0, 1.0), &g).unwrap();
    let ev = evolve(&state, &spec, &g, &EvolveConfig { dt: 1e-3, n_steps: 6283, record_every: 100, snapshot_every: Some(100) })
        .unwrap();
    let mut ratios: Vec<f64> = ev
        .snapshots
        .iter()
        .map(|s| {
            let d = wkb_diagnostic(s, &spec, &g, default_threshold(s)).unwrap();
            for c in &d.channels {
                assert!(c.hamilton_jacobi_residual <= 1e-8 && c.transport_residual <= 1e-8, "{c:?}");
            }
            d.max_ratio()
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    ratios[ratios.len() / 2]
}

/// Over one Rabi period the typical source-to-flow ratio grows as ħ shrinks.
#[test]
fn classicality_ratio_grows_with_inverse_hbar() {
    let ratios: Vec<f64> = [1.0, 0.5, 0.25, 0.125].into_iter().map(median_ratio).collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    assert!(ratios[3] > 3.0 * ratios[0], "{ratios:?}");
}

#[test]
fn pointer_case_has_no_source() {
    let g = grid(256);
    let spec = CouplingSpec { lambda_z: Field::Linear { offset: 0.0, slope: 1.0 }, ..Default::default() };
    let s = init_state(Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0), packet(0.5, 1.0), &g).unwrap();
    let s = evolve(&s, &spec, &g, &cfg(1e-3, 500, 500)).unwrap().final_state;
    let d = wkb_diagnostic(&s, &spec, &g, default_threshold(&s)).unwrap();
    for c in &d.channels {
        assert_eq!(c.transport_source, 0.0);
        assert_eq!(c.ratio, 0.0);
        assert!(c.transport_residual <= 1e-8 && c.hamilton_jacobi_residual <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn total_norm_is_conserved_for_any_coupling(
        lx in -1.0..1.0f64, slope in -0.5..0.5f64, ly in -1.0..1.0f64, lz in -1.0..1.0f64,
        theta in 0.0..std::f64::consts::FRAC_PI_2, phase in 0.0..std::f64::consts::TAU,
    ) {
        let g = grid(256);
        let spec = CouplingSpec {
            potential: Potential::Harmonic { omega: 1.0 },
            lambda_x: Field::Linear { offset: lx, slope },
            lambda_y: Field::Ramped { value: ly, ramp: 1.0 },
            lambda_z: Field::Constant { value: lz },
        };
        let c1 = Complex64::new(theta.cos(), 0.0);
        let c2 = Complex64::from_polar(theta.sin(), phase);
        let s = init_state(c1, c2, packet(0.5, 0.8), &g).unwrap();
        let ev = evolve(&s, &spec, &g, &cfg(5e-3, 1000, 50)).unwrap();
        prop_assert!(ev.max_norm_drift <= 1e-8);
        prop_assert!(ev.p1.iter().zip(&ev.p2).all(|(a, b)| *a >= 0.0 && *b >= 0.0));
    }
}
