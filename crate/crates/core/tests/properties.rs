//! Property tests for the invariants of each module. Random models and
//! matrices are drawn from a ChaCha stream keyed by a proptest-chosen seed.

mod common;

use cbi_lab::coefficients::{
    aggregate_covariance, branching_covariances, effective_branching, immigration_mean,
    psd_sqrt, DerivedCoefficients, PSD_TOL, SYMMETRY_TOL,
};
use cbi_lab::harness::{
    ks_distance, kolmogorov_99, martingale_differences, reconstruct_skeleton,
};
use cbi_lab::io::{parse_model, ModelDocument};
use cbi_lab::linalg::{asymmetry, min_sym_eigenvalue, Mat};
use cbi_lab::model::check_moment_condition;
use cbi_lab::moments::{classify, exp_integral, mean_asymptote, mean_at, Regime};
use cbi_lab::simulate::{sample_ensemble, sample_limit_exact, simulate_cbi, skeleton_ensemble, Stepping};
use cbi_lab::spectral::{
    decay_envelope, deviation_from_projection, is_irreducible, matrix_exp, perron,
    positivity_check,
};
use cbi_lab::{AtomMeasure, ModelSpec};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_irreducible_matrix(seed: u64) -> Mat {
    let mut r = rng(seed);
    let d = r.random_range(2..=5);
    random_irreducible(&mut r, d)
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn validation_is_idempotent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=4);
        let m = random_spec(&mut r, d).validate().unwrap();
        prop_assert_eq!(m.clone().revalidate().unwrap(), m);
    }

    #[test]
    fn moment_condition_is_monotone(seed in any::<u64>(), q in 1u32..8) {
        let mut r = rng(seed);
        let m = random_spec(&mut r, 3).validate().unwrap();
        if check_moment_condition(&m, q).verified {
            for q2 in 1..=q {
                prop_assert!(check_moment_condition(&m, q2).verified);
            }
        }
    }

    #[test]
    fn second_moment_split_adds_up(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_spec(&mut r, 3).validate().unwrap();
        let nu = m.nu();
        let (below, above) = nu.second_moment_split();
        let total = nu.integrate(|z| z.iter().map(|x| x * x).sum());
        prop_assert!((below + above - total).abs() <= 1e-15 * total.max(1.0));
    }

    #[test]
    fn irreducibility_iff_positive_exponential(seed in any::<u64>()) {
        let a = random_ess_nonneg(&mut rng(seed));
        let irr = is_irreducible(&a).unwrap();
        for t in [0.1, 1.0, 10.0] {
            prop_assert_eq!(positivity_check(&a, t).unwrap(), irr, "t = {}, A = {}", t, a);
        }
    }

    #[test]
    fn perron_identities(seed in any::<u64>()) {
        let a = random_irreducible_matrix(seed);
        let sp = perron(&a).unwrap();
        let d = a.nrows();
        let scale = a.amax().max(1.0);
        prop_assert!((&sp.pi * &sp.pi - &sp.pi).amax() < 1e-10);
        prop_assert!((&sp.pi * &a - &sp.pi * sp.s).amax() < 1e-10 * scale);
        prop_assert!((&a * &sp.pi - &sp.pi * sp.s).amax() < 1e-10 * scale);
        prop_assert!((&a * &sp.u - &sp.u * sp.s).amax() < 1e-10 * scale);
        prop_assert!((sp.v.transpose() * &a - sp.v.transpose() * sp.s).amax() < 1e-10 * scale * sp.v.amax());
        prop_assert!((sp.u.sum() - 1.0).abs() < 1e-12);
        prop_assert!((sp.v.dot(&sp.u) - 1.0).abs() < 1e-12);
        prop_assert!(sp.u.min() > 0.0 && sp.v.min() > 0.0);
        prop_assert!(sp.kappa > 0.0 && sp.cconst > 0.0);
        prop_assert_eq!(sp.pi.nrows(), d);
    }

    #[test]
    fn envelope_dominates_deviation(seed in any::<u64>()) {
        let a = random_irreducible_matrix(seed);
        let sp = perron(&a).unwrap();
        for k in 0..=100 {
            let t = 0.5 * k as f64;
            let dev = deviation_from_projection(&sp, t).unwrap();
            prop_assert!(dev <= decay_envelope(&sp, t), "t = {}: {} > {}", t, dev, decay_envelope(&sp, t));
        }
        // Off-grid points sit inside the 5% calibration margin.
        for t in [0.25, 3.3, 17.9] {
            prop_assert!(deviation_from_projection(&sp, t).unwrap() <= decay_envelope(&sp, t));
        }
    }

    #[test]
    fn semigroup_property(seed in any::<u64>(), s in 0.0f64..3.0, t in 0.0f64..3.0) {
        let mut r = rng(seed);
        let d = r.random_range(1..=5);
        let a = Mat::from_fn(d, d, |_, _| r.random_range(-1.5..1.5));
        let lhs = matrix_exp(&a, s + t).unwrap();
        let rhs = matrix_exp(&a, s).unwrap() * matrix_exp(&a, t).unwrap();
        prop_assert!((&lhs - &rhs).amax() < 1e-9 * lhs.amax().max(1.0));
    }

    #[test]
    fn exponential_with_taylor_and_squaring(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = Mat::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0));
        // e^{2A} as (e^{2A/2^k})^{2^k}, the inner factor by a 20-term Taylor sum.
        let k = 10;
        let small = &a * (2.0 / f64::powi(2.0, k));
        let mut term = Mat::identity(3, 3);
        let mut e = term.clone();
        for j in 1..20 {
            term = &term * &small / j as f64;
            e += &term;
        }
        for _ in 0..k {
            e = &e * &e;
        }
        prop_assert!((matrix_exp(&a, 2.0).unwrap() - &e).amax() < 1e-9 * e.amax().max(1.0));
    }

    #[test]
    fn critical_closing_identities(seed in any::<u64>(), d in 2usize..=4) {
        let m = random_critical(seed, d);
        let c = DerivedCoefficients::compute(&m).unwrap();
        let v = &c.spectral.v;
        prop_assert!(c.is_critical());
        prop_assert!((v.dot(&c.betatilde2) - v.dot(&c.betatilde)).abs() < 1e-10);
        let ct = c.ctilde.as_ref().unwrap();
        prop_assert!((v.dot(&(ct * v)) - v.dot(&(&c.cbar * v))).abs() < 1e-8);
        let e = matrix_exp(&c.btilde, 1.0).unwrap();
        prop_assert!((v.transpose() * e - v.transpose()).amax() < 1e-10 * v.amax());
        for m in [&c.cbar, ct, &c.v_matrix] {
            prop_assert!(asymmetry(m) <= SYMMETRY_TOL);
            prop_assert!(min_sym_eigenvalue(m) >= -PSD_TOL);
        }
        // β̃̃ = E(X_1) from a zero start.
        let mean1 = mean_at(&m, 1.0).unwrap();
        prop_assert!((mean1 - &c.betatilde2).amax() < 1e-9 * c.betatilde2.amax().max(1.0));
    }

    #[test]
    fn cbar_vanishes_iff_no_branching_noise(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut spec = random_spec(&mut r, 3);
        let quiet = r.random_bool(0.5);
        if quiet {
            spec.c = vec![0.0; 3];
            spec.mu = vec![AtomMeasure::zero(); 3];
        }
        let m = spec.validate().unwrap();
        let u = perron(&effective_branching(&m)).unwrap().u;
        let cbar = aggregate_covariance(&branching_covariances(&m), &u);
        let noisy = m.c().iter().any(|&x| x > 0.0) || m.mu().iter().any(|x| !x.is_zero());
        prop_assert_eq!(cbar.amax() == 0.0, !noisy);
    }

    #[test]
    fn psd_sqrt_squares_back(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=5);
        let g = Mat::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        let m = &g * g.transpose();
        let s = psd_sqrt(&m).unwrap();
        prop_assert!((&s * &s - &m).amax() < 1e-9);
        prop_assert!(asymmetry(&s) < 1e-12);
    }

    #[test]
    fn mean_semigroup(seed in any::<u64>(), t in 0.0f64..5.0, s in 0.0f64..5.0) {
        let mut r = rng(seed);
        let d = r.random_range(1..=4);
        let mut spec = random_spec(&mut r, d);
        spec.x0_mean = (0..d).map(|_| r.random_range(0.0..3.0)).collect();
        let m = spec.validate().unwrap();
        let bt = effective_branching(&m);
        let beta = immigration_mean(&m);
        let lhs = mean_at(&m, t + s).unwrap();
        let rhs = matrix_exp(&bt, s).unwrap() * mean_at(&m, t).unwrap() + exp_integral(&bt, s).unwrap() * beta;
        prop_assert!((&lhs - &rhs).amax() < 1e-9 * lhs.amax().max(1.0));
    }

    #[test]
    fn critical_mean_grows_along_projection(seed in any::<u64>(), d in 2usize..=4) {
        let m = random_critical(seed, d);
        let sp = perron(&effective_branching(&m)).unwrap();
        let beta = immigration_mean(&m);
        let t = 200.0;
        let dev = (mean_at(&m, t).unwrap() / t - &sp.pi * &beta).norm();
        let bound = 2.0 * (sp.cconst / sp.kappa) * (m.x0_mean().norm() + beta.norm()) / t;
        prop_assert!(dev <= bound, "{} > {}", dev, bound);
        let asym = mean_asymptote(&m).unwrap();
        prop_assert_eq!(asym.regime, Regime::Critical);
    }

    #[test]
    fn model_document_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=4);
        let m = random_spec(&mut r, d).validate().unwrap();
        let text = ModelDocument::from_model(&m).to_json();
        prop_assert_eq!(parse_model(&text).unwrap().to_model().unwrap(), m);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn simulated_states_are_nonnegative_and_reproducible(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let m = random_spec(&mut r, d).validate().unwrap();
        let grid: Vec<f64> = (0..=40).map(|k| 0.05 * k as f64).collect();
        let a = sample_ensemble(&m, &grid, Stepping::Adaptive(0.01), 3, seed).unwrap();
        prop_assert!(a.iter().flatten().flat_map(|x| x.iter()).all(|&x| x >= 0.0));
        let b = sample_ensemble(&m, &grid, Stepping::Adaptive(0.01), 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn skeleton_reconstruction(seed in any::<u64>(), d in 2usize..=3) {
        let m = random_critical(seed, d);
        let c = DerivedCoefficients::compute(&m).unwrap();
        let sks = skeleton_ensemble(&m, 12, Stepping::Adaptive(0.01), 4, seed).unwrap();
        for sk in &sks {
            let series = martingale_differences(sk, &c.btilde, &c.betatilde2).unwrap();
            let rebuilt = reconstruct_skeleton(&sk[0], &series.m, &c.btilde, &c.betatilde2).unwrap();
            for (x, y) in rebuilt.iter().zip(sk) {
                prop_assert!((x - y).amax() < 1e-9 * y.amax().max(1.0));
            }
        }
    }

}

#[test]
fn fixed_step_paths_are_reproducible() {
    let m = reference();
    let a = simulate_cbi(&m, 3.0, 0.01, 9).unwrap();
    assert_eq!(a, simulate_cbi(&m, 3.0, 0.01, 9).unwrap());
    assert_ne!(a, simulate_cbi(&m, 3.0, 0.01, 10).unwrap());
    assert!(a.states.iter().flatten().all(|&x| x >= 0.0));
}

#[test]
fn classification_matches_regimes_of_shifted_models() {
    for seed in 0..10 {
        let m = random_critical(seed, 3);
        assert_eq!(classify(&m).unwrap().regime, Regime::Critical);
        let mut spec: ModelSpec = m.spec().clone();
        for i in 0..3 {
            spec.b[(i, i)] -= 0.1;
        }
        assert_eq!(classify(&spec.clone().validate().unwrap()).unwrap().regime, Regime::Subcritical);
        for i in 0..3 {
            spec.b[(i, i)] += 0.2;
        }
        assert_eq!(classify(&spec.validate().unwrap()).unwrap().regime, Regime::Supercritical);
    }
}

#[test]
fn subcritical_scalar_fixture_converges() {
    let mut spec = load_fixture("scalar.json").into_spec();
    spec.b[(0, 0)] -= 0.5;
    let m = spec.validate().unwrap();
    let lim = mean_asymptote(&m).unwrap();
    assert_eq!(lim.regime, Regime::Subcritical);
    assert!((mean_at(&m, 50.0).unwrap() - &lim.limit).amax() < 1e-6);
}

#[test]
fn ks_self_test_on_exact_sampler() {
    let n = 4000;
    for (i, (a, b, t)) in [(2.0, 1.0, 1.0), (0.3, 2.0, 0.5), (5.0, 0.7, 3.0), (1.0, 1.0, 10.0)]
        .into_iter()
        .enumerate()
    {
        let s = sample_limit_exact(a, b, t, n, 1000 + i as u64).unwrap();
        let ks = ks_distance(&s.values, 2.0 * a / b, 2.0 / (b * t)).unwrap();
        assert!(ks < kolmogorov_99(n), "a = {a}, b = {b}: ks = {ks}");
    }
}
