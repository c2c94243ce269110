//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cbi_lab::coefficients::{aggregate_covariance, DerivedCoefficients};
use cbi_lab::harness::{
    ks_distance, martingale_differences_with, martingale_checks, martingale_moment_growth,
    reconstruct_skeleton, run_convergence, state_moment_growth, ConvergenceConfig,
    ConvergenceReport, GrowthSeries, MartingaleSeries,
};
use cbi_lab::linalg::{from_rows, Mat};
use cbi_lab::moments::mean_at;
use cbi_lab::simulate::{limit_euler_terminal, sample_ensemble, skeleton_ensemble, Stepping};
use cbi_lab::spectral::{
    decay_envelope, deviation_from_projection, is_irreducible, matrix_exp, perron,
    positivity_check,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose()
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn reference_run() -> &'static ConvergenceReport {
    static RUN: OnceLock<ConvergenceReport> = OnceLock::new();
    RUN.get_or_init(|| run_convergence(&reference(), &ConvergenceConfig::default()).unwrap())
}

fn perron_data_of_symmetric_exchange() -> Outcome {
    let b = from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]);
    let sp = perron(&b).map_err(|e| e.to_string())?;
    let u_err = (sp.u[0] - 0.5).abs().max((sp.u[1] - 0.5).abs());
    let v_err = (sp.v[0] - 1.0).abs().max((sp.v[1] - 1.0).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut c_err: f64 = 0.0;
    for _ in 0..100 {
        let ck = vec![random_psd(&mut rng, 2), random_psd(&mut rng, 2)];
        let cbar = aggregate_covariance(&ck, &sp.u);
        c_err = c_err.max(mat_close(&cbar, &((&ck[0] + &ck[1]) * 0.5)));
    }
    check(
        sp.s.abs() < 1e-12 && u_err < 1e-10 && v_err < 1e-10 && c_err < 1e-12,
        format!("|s| = {:.1e}, u err = {u_err:.1e}, v err = {v_err:.1e}, C̄ err = {c_err:.1e}", sp.s.abs()),
    )
}

fn closing_identities() -> Outcome {
    let start = Instant::now();
    let (mut drift_err, mut var_err): (f64, f64) = (0.0, 0.0);
    for seed in 0..20u64 {
        let d = 2 + (seed % 3) as usize;
        let model = random_critical(1000 + seed, d);
        let c = DerivedCoefficients::compute(&model).map_err(|e| e.to_string())?;
        let v = &c.spectral.v;
        drift_err = drift_err.max((v.dot(&c.betatilde2) - v.dot(&c.betatilde)).abs());
        let ctilde = c.ctilde.as_ref().ok_or(format!("model {seed} not classified critical"))?;
        let lhs = (ctilde * v).dot(v);
        let rhs = (&c.cbar * v).dot(v);
        var_err = var_err.max((lhs - rhs).abs());
    }
    let elapsed = start.elapsed();
    check(
        drift_err < 1e-10 && var_err < 1e-8 && elapsed < Duration::from_secs(5),
        format!("max drift gap {drift_err:.1e}, max variance gap {var_err:.1e}, {elapsed:.2?}"),
    )
}

fn irreducibility_and_envelope() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut irreducible, mut mismatches, mut worst_ratio) = (0, 0, 0.0f64);
    for _ in 0..50 {
        let a = random_ess_nonneg(&mut rng);
        let irr = is_irreducible(&a).map_err(|e| e.to_string())?;
        for t in [0.1, 1.0, 10.0] {
            if positivity_check(&a, t).map_err(|e| e.to_string())? != irr {
                mismatches += 1;
            }
        }
        if !irr {
            continue;
        }
        irreducible += 1;
        let sp = perron(&a).map_err(|e| e.to_string())?;
        for k in 0..=500 {
            let t = k as f64 * 0.1;
            let dev = deviation_from_projection(&sp, t).map_err(|e| e.to_string())?;
            let env = decay_envelope(&sp, t);
            if dev > 0.0 {
                worst_ratio = worst_ratio.max(dev / env);
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && worst_ratio <= 1.0 && irreducible > 0 && elapsed < Duration::from_secs(10),
        format!(
            "{irreducible}/50 irreducible, {mismatches} positivity mismatches, \
             max deviation/envelope {worst_ratio:.3}, {elapsed:.2?}"
        ),
    )
}

fn mean_formula() -> Outcome {
    let model = reference();
    let n = 10_000;
    let ens = sample_ensemble(&model, &[5.0], Stepping::Fixed(1e-3), n, 4).map_err(|e| e.to_string())?;
    let exact = mean_at(&model, 5.0).map_err(|e| e.to_string())?;
    let mut worst_z: f64 = 0.0;
    for i in 0..model.d() {
        let (m, se) = mean_and_se(ens.iter().map(|p| p[0][i]));
        worst_z = worst_z.max((m - exact[i]).abs() / se);
    }
    let c = DerivedCoefficients::compute(&model).map_err(|e| e.to_string())?;
    let at_one = mean_at(&model, 1.0).map_err(|e| e.to_string())?;
    let drift_err = (at_one - &c.betatilde2).amax();
    check(
        worst_z <= 3.0 && drift_err < 1e-9,
        format!("max |z| = {worst_z:.2} at t = 5, |mean_at(1) − β̃̃| = {drift_err:.1e}"),
    )
}

fn limit_gamma_marginal() -> Outcome {
    let x = limit_euler_terminal(2.0, 1.0, 1.0, 1e-3, 10_000, 5, 0.0).map_err(|e| e.to_string())?;
    let ks = ks_distance(&x, 4.0, 2.0).map_err(|e| e.to_string())?;
    check(ks < 0.03, format!("KS = {ks:.4}"))
}

fn desk_scale_convergence() -> Outcome {
    let report = reference_run();
    let stats: Vec<String> = report
        .levels
        .iter()
        .map(|l| format!("{}:{:.4}", l.n, l.ks.unwrap_or(f64::NAN)))
        .collect();
    let s = &report.summary;
    check(
        s.max_increase < 0.02 && s.final_statistic < 0.06,
        format!("KS {} (max increase {:.4})", stats.join(" "), s.max_increase),
    )
}

fn type_frequencies() -> Outcome {
    let level = reference_run()
        .levels
        .iter()
        .find(|l| l.n == 200)
        .ok_or("no level n = 200")?;
    let f = level.frequencies.as_ref().ok_or("no frequency statistics")?;
    let worst = f.median_errors.iter().fold(0.0f64, |a, &e| a.max(e));
    check(
        worst < 0.05 && f.dropped_fraction() < 0.01,
        format!("max median error {worst:.4}, dropped {:.2}%", 100.0 * f.dropped_fraction()),
    )
}

fn martingale_property() -> Outcome {
    let model = reference();
    let c = DerivedCoefficients::compute(&model).map_err(|e| e.to_string())?;
    let exp_b = matrix_exp(&c.btilde, 1.0).map_err(|e| e.to_string())?;
    let skeletons = skeleton_ensemble(&model, 10, Stepping::Fixed(1e-3), 5000, 8).map_err(|e| e.to_string())?;
    let series: Vec<MartingaleSeries> = skeletons
        .iter()
        .map(|sk| martingale_differences_with(sk, &exp_b, &c.betatilde2))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let worst_z = martingale_checks(&series, &[1, 5, 10])
        .iter()
        .fold(0.0f64, |a, m| a.max(m.max_abs_z()));
    let mut recon_err: f64 = 0.0;
    for s in &series {
        let rebuilt = reconstruct_skeleton(&s.skeleton[0], &s.m, &c.btilde, &c.betatilde2)
            .map_err(|e| e.to_string())?;
        for (x, y) in rebuilt.iter().zip(&s.skeleton) {
            recon_err = recon_err.max((x - y).amax());
        }
    }
    check(
        worst_z <= 3.0 && recon_err < 1e-9,
        format!("max |z| = {worst_z:.2}, max reconstruction error {recon_err:.1e}"),
    )
}

fn band(series: &GrowthSeries) -> (bool, String) {
    let (spread, slope) = (series.spread(), series.log_slope());
    (
        spread <= 2.0 && slope.abs() <= 0.15,
        format!("spread {spread:.3}, slope {slope:+.3}"),
    )
}

fn moment_growth_bands() -> Outcome {
    let model = reference();
    let c = DerivedCoefficients::compute(&model).map_err(|e| e.to_string())?;
    let exp_b = matrix_exp(&c.btilde, 1.0).map_err(|e| e.to_string())?;
    let skeletons =
        skeleton_ensemble(&model, 100, Stepping::Adaptive(1e-2), 2000, 9).map_err(|e| e.to_string())?;
    let series: Vec<MartingaleSeries> = skeletons
        .iter()
        .map(|sk| martingale_differences_with(sk, &exp_b, &c.betatilde2))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let times: Vec<usize> = (1..=10).map(|k| 10 * k).collect();
    let ns: Vec<usize> = (1..=10).map(|k| 5 * k).collect();
    let state = state_moment_growth(&skeletons, 1, &times).map_err(|e| e.to_string())?;
    let mart = martingale_moment_growth(&series, 2, &ns).map_err(|e| e.to_string())?;
    let (ok_state, d_state) = band(&state);
    let (ok_mart, d_mart) = band(&mart);
    check(
        ok_state && ok_mart,
        format!("E‖X_t‖/(1+t): {d_state}; E‖M_n‖⁴/n²: {d_mart}"),
    )
}

fn degenerate_branch() -> Outcome {
    let model = load_fixture("degenerate.json");
    let report = run_convergence(&model, &ConvergenceConfig::default()).map_err(|e| e.to_string())?;
    let mut ok = report.degenerate;
    let mut parts = Vec::new();
    for l in &report.levels {
        let err = l.degenerate_error.unwrap_or(f64::INFINITY);
        ok &= err < 3.0 / (l.n as f64).sqrt();
        parts.push(format!("{}:{err:.4}", l.n));
    }

    let scalar = load_fixture("scalar.json");
    let c = DerivedCoefficients::compute(&scalar).map_err(|e| e.to_string())?;
    let spec = scalar.spec();
    let second: f64 = spec.mu[0].atoms.iter().map(|a| a.weight * a.point[0].powi(2)).sum();
    let expected = 2.0 * spec.c[0] + second;
    let cbar = c.cbar[(0, 0)];
    let cbar_err = (cbar - expected).abs();
    ok &= c.btilde[(0, 0)] == 0.0 && cbar_err <= 4.0 * f64::EPSILON * expected;
    check(
        ok,
        format!(
            "median |v·X_n/n − a t| {} ; scalar b̃ = {}, C̄ = {cbar} (expected {expected})",
            parts.join(" "),
            c.btilde[(0, 0)]
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Perron data of the symmetric exchange matrix", perron_data_of_symmetric_exchange),
        ("closing identities on random critical models", closing_identities),
        ("irreducibility, positivity and decay envelope", irreducibility_and_envelope),
        ("simulated mean against the exact mean", mean_formula),
        ("Euler limit against its gamma marginal", limit_gamma_marginal),
        ("KS convergence over the scaling grid", desk_scale_convergence),
        ("type frequencies at n = 200", type_frequencies),
        ("martingale differences and reconstruction", martingale_property),
        ("moment growth bands", moment_growth_bands),
        ("degenerate branch and scalar coefficients", degenerate_branch),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail} ({elapsed:.1?})", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
