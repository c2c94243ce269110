//! Monte Carlo verification of the diffusion approximation.
//!
//! For a critical irreducible model the integer-time skeleton satisfies
//! `X_k = e^{B̃} X_{k-1} + β̃̃ + M_k` with martingale differences `M_k`, and
//! `v^T X_{⌊nt⌋} / n` converges in law to the gamma marginal of the limit
//! diffusion while `X_{⌊nt⌋}` collapses onto the ray spanned by `u`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
use thiserror::Error;

use crate::coefficients::DerivedCoefficients;
use crate::io::ModelDocument;
use crate::linalg::{Mat, Vector};
use crate::model::ValidatedModel;
use crate::moments::{Classification, Regime};
use crate::rng::derive_seed;
use crate::simulate::{skeleton_ensemble, Stepping, MAX_CBI_DT};
use crate::spectral::{matrix_exp, SpectralSummary};
use crate::Result;

/// KS acceptance threshold for `N = 2000` paths per level.
pub const KS_THRESHOLD: f64 = 0.06;
/// Largest tolerated increase of the KS distance between consecutive levels.
pub const KS_STEP_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("skeleton needs at least {need} states and matching dimensions, got {got}")]
    LengthMismatch { need: usize, got: usize },
    #[error("skeleton of length {len} does not cover index {needed}")]
    HorizonTooShort { len: usize, needed: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("every state has zero total mass")]
    AllZeroMass,
    #[error("model is not critical (s = {0:e})")]
    NotCritical(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// `M_k = X_k − e^{B̃} X_{k−1} − β̃̃` for `k = 1..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleSeries {
    pub m: Vec<Vector>,
    pub skeleton: Vec<Vector>,
}

pub fn martingale_differences(
    skeleton: &[Vector],
    btilde: &Mat,
    betatilde2: &Vector,
) -> Result<MartingaleSeries> {
    let exp_b = matrix_exp(btilde, 1.0)?;
    Ok(martingale_differences_with(skeleton, &exp_b, betatilde2)?)
}

/// As [`martingale_differences`] with a precomputed `e^{B̃}`.
pub fn martingale_differences_with(
    skeleton: &[Vector],
    exp_b: &Mat,
    betatilde2: &Vector,
) -> Result<MartingaleSeries, HarnessError> {
    let d = betatilde2.len();
    if skeleton.len() < 2 || skeleton.iter().any(|x| x.len() != d) || exp_b.nrows() != d {
        return Err(HarnessError::LengthMismatch {
            need: 2,
            got: skeleton.len(),
        });
    }
    let m = skeleton
        .windows(2)
        .map(|w| &w[1] - exp_b * &w[0] - betatilde2)
        .collect();
    Ok(MartingaleSeries {
        m,
        skeleton: skeleton.to_vec(),
    })
}

/// `X_k = e^{kB̃} X_0 + Σ_{j=1}^k e^{(k−j)B̃} (M_j + β̃̃)` for `k = 0..K`.
pub fn reconstruct_skeleton(
    x0: &Vector,
    m: &[Vector],
    btilde: &Mat,
    betatilde2: &Vector,
) -> Result<Vec<Vector>> {
    let powers: Vec<Mat> = (0..=m.len())
        .map(|p| matrix_exp(btilde, p as f64))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(m.len() + 1);
    for k in 0..=m.len() {
        let mut x = &powers[k] * x0;
        for j in 1..=k {
            x += &powers[k - j] * (&m[j - 1] + betatilde2);
        }
        out.push(x);
    }
    Ok(out)
}

/// `v^T X_{⌊nt⌋} / n`.
pub fn scaled_projection(
    skeleton: &[Vector],
    n: usize,
    v: &Vector,
    t: f64,
) -> Result<f64, HarnessError> {
    if n == 0 || !(t >= 0.0) {
        return Err(HarnessError::InvalidParameter(format!(
            "need n >= 1 and t >= 0, got n = {n}, t = {t}"
        )));
    }
    let idx = (n as f64 * t).floor() as usize;
    let x = skeleton.get(idx).ok_or(HarnessError::HorizonTooShort {
        len: skeleton.len(),
        needed: idx,
    })?;
    Ok(v.dot(x) / n as f64)
}

/// Sup distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance_with<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        // Step over ties so the empirical CDF is evaluated right-continuously.
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        let below = i as f64 / n;
        let above = (j + 1) as f64 / n;
        worst = worst.max((f - below).abs()).max((above - f).abs());
        i = j + 1;
    }
    Ok(worst.min(1.0))
}

/// KS distance to `Gamma(shape, rate)`.
pub fn ks_distance(samples: &[f64], shape: f64, rate: f64) -> Result<f64, HarnessError> {
    let dist = GammaDist::new(shape, rate).map_err(|e| {
        HarnessError::InvalidParameter(format!("gamma({shape}, {rate}): {e}"))
    })?;
    ks_distance_with(samples, |x| if x <= 0.0 { 0.0 } else { dist.cdf(x) })
}

/// 99% quantile of the Kolmogorov statistic, asymptotically `1.628 / sqrt(N)`.
pub fn kolmogorov_99(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Relative-frequency statistics at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyStats {
    /// Median over paths of `|X_i / Σ_k X_k − u_i|`, per type.
    pub median_errors: Vec<f64>,
    /// `ratio_medians[i][j]`: median of `X_i / X_j` over paths with `X_j > 0`.
    pub ratio_medians: Vec<Vec<f64>>,
    /// Paths with zero total mass, excluded from the statistics.
    pub dropped: usize,
    pub used: usize,
}

impl FrequencyStats {
    pub fn dropped_fraction(&self) -> f64 {
        self.dropped as f64 / (self.dropped + self.used).max(1) as f64
    }
}

pub fn relative_frequencies(states: &[Vector], u: &Vector) -> Result<FrequencyStats, HarnessError> {
    let d = u.len();
    let live: Vec<&Vector> = states.iter().filter(|x| x.sum() > 0.0).collect();
    if live.is_empty() {
        return Err(HarnessError::AllZeroMass);
    }
    let median_errors = (0..d)
        .map(|i| {
            let mut errs: Vec<f64> = live.iter().map(|x| (x[i] / x.sum() - u[i]).abs()).collect();
            median(&mut errs)
        })
        .collect();
    let ratio_medians = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let mut r: Vec<f64> = live
                        .iter()
                        .filter(|x| x[j] > 0.0)
                        .map(|x| x[i] / x[j])
                        .collect();
                    median(&mut r)
                })
                .collect()
        })
        .collect();
    Ok(FrequencyStats {
        median_errors,
        ratio_medians,
        dropped: states.len() - live.len(),
        used: live.len(),
    })
}

/// Median angle (radians) between the non-zero states and the ray `R_+ u`.
pub fn median_ray_angle(states: &[Vector], u: &Vector) -> Option<f64> {
    let unit = u / u.norm();
    let mut angles: Vec<f64> = states
        .iter()
        .filter(|x| x.norm() > 0.0)
        .map(|x| {
            let along = x.dot(&unit);
            (x - &unit * along).norm().atan2(along)
        })
        .collect();
    if angles.is_empty() {
        None
    } else {
        Some(median(&mut angles))
    }
}

/// Monte Carlo mean, standard error, and z-score of one coordinate of `M_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleCheck {
    pub k: usize,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_scores: Vec<f64>,
}

impl MartingaleCheck {
    pub fn max_abs_z(&self) -> f64 {
        self.z_scores.iter().fold(0.0, |a, z| a.max(z.abs()))
    }
}

pub fn martingale_checks(series: &[MartingaleSeries], ks: &[usize]) -> Vec<MartingaleCheck> {
    let mut out = Vec::new();
    if series.is_empty() {
        return out;
    }
    let n = series.len() as f64;
    for &k in ks {
        if k == 0 || series.iter().any(|s| s.m.len() < k) {
            continue;
        }
        let d = series[0].m[k - 1].len();
        let mut means = vec![0.0; d];
        let mut ses = vec![0.0; d];
        let mut zs = vec![0.0; d];
        for i in 0..d {
            let vals: Vec<f64> = series.iter().map(|s| s.m[k - 1][i]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let se = (var / n).sqrt();
            means[i] = mean;
            ses[i] = se;
            zs[i] = if se > 0.0 { mean / se } else { 0.0 };
        }
        out.push(MartingaleCheck {
            k,
            means,
            std_errors: ses,
            z_scores: zs,
        });
    }
    out
}

/// `(x, ratio)` pairs of a moment-growth diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthSeries {
    pub q: u32,
    pub points: Vec<(f64, f64)>,
}

impl GrowthSeries {
    /// `max ratio / min ratio`.
    pub fn spread(&self) -> f64 {
        let hi = self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let lo = self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        hi / lo
    }

    /// Least-squares slope of `ln ratio` against `ln x`.
    pub fn log_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|&(x, r)| (x.ln(), r.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn is_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

/// `E‖X_t‖^q / (1 + t)^q` over integer times `t`.
pub fn state_moment_growth(
    skeletons: &[Vec<Vector>],
    q: u32,
    times: &[usize],
) -> Result<GrowthSeries, HarnessError> {
    if skeletons.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let n = skeletons.len() as f64;
    let mut points = Vec::with_capacity(times.len());
    for &t in times {
        let mut acc = 0.0;
        for sk in skeletons {
            let x = sk.get(t).ok_or(HarnessError::HorizonTooShort {
                len: sk.len(),
                needed: t,
            })?;
            acc += x.norm().powi(q as i32);
        }
        let tf = t as f64;
        points.push((tf, acc / n / (1.0 + tf).powi(q as i32)));
    }
    Ok(GrowthSeries { q, points })
}

/// `E‖M_n‖^{2q} / n^q` over `n`.
pub fn martingale_moment_growth(
    series: &[MartingaleSeries],
    q: u32,
    ns: &[usize],
) -> Result<GrowthSeries, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let count = series.len() as f64;
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(HarnessError::InvalidParameter("martingale index starts at 1".into()));
        }
        let mut acc = 0.0;
        for s in series {
            let m = s.m.get(n - 1).ok_or(HarnessError::HorizonTooShort {
                len: s.m.len(),
                needed: n,
            })?;
            acc += m.norm().powi(2 * q as i32);
        }
        let nf = n as f64;
        points.push((nf, acc / count / nf.powi(q as i32)));
    }
    Ok(GrowthSeries { q, points })
}

/// Both growth diagnostics at a common order `q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentGrowth {
    pub state: GrowthSeries,
    pub martingale: GrowthSeries,
}

pub fn moment_growth(
    skeletons: &[Vec<Vector>],
    series: &[MartingaleSeries],
    q: u32,
    t_grid: &[usize],
    n_grid: &[usize],
) -> Result<MomentGrowth, HarnessError> {
    Ok(MomentGrowth {
        state: state_moment_growth(skeletons, q, t_grid)?,
        martingale: martingale_moment_growth(series, q, n_grid)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConfig {
    pub n_grid: Vec<usize>,
    pub t: f64,
    pub paths: usize,
    pub seed: u64,
    /// Upper bound on the adaptive step size.
    pub max_dt: f64,
    pub martingale_ks: Vec<usize>,
    pub q: u32,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![25, 50, 100, 200],
            t: 1.0,
            paths: 2000,
            seed: 42,
            max_dt: MAX_CBI_DT,
            martingale_ks: vec![1, 5, 10],
            q: 1,
        }
    }
}

/// Statistics at one scaling level `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
    /// KS distance of `v^T X_{⌊nt⌋}/n` to the gamma marginal (non-degenerate case).
    pub ks: Option<f64>,
    /// Median `|v^T X_{⌊nt⌋}/n − a t|` (degenerate case `b = 0`).
    pub degenerate_error: Option<f64>,
    pub threshold: f64,
    pub projection_mean: f64,
    pub projection_variance: f64,
    pub frequencies: Option<FrequencyStats>,
    pub median_ray_angle: Option<f64>,
    pub martingale: Vec<MartingaleCheck>,
    /// `E‖X_{⌊nt⌋}‖^q / (1 + ⌊nt⌋)^q`.
    pub moment_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDocument {
    pub s: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub kappa: Option<f64>,
    pub cconst: f64,
    pub irreducible: bool,
}

impl From<&SpectralSummary> for SpectralDocument {
    fn from(s: &SpectralSummary) -> Self {
        Self {
            s: s.s,
            u: s.u.iter().copied().collect(),
            v: s.v.iter().copied().collect(),
            pi: crate::linalg::to_rows(&s.pi),
            kappa: s.kappa.is_finite().then_some(s.kappa),
            cconst: s.cconst,
            irreducible: s.irreducible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub final_statistic: f64,
    pub final_threshold: f64,
    pub max_increase: f64,
    pub weakly_decreasing: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub t_or_n: f64,
    pub q: u32,
    pub ratio: f64,
    pub series: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub model: ModelDocument,
    pub classification: Classification,
    pub spectral: SpectralDocument,
    pub coefficients: crate::coefficients::CoefficientsDocument,
    pub config: ConvergenceConfig,
    pub degenerate: bool,
    pub gamma_shape: Option<f64>,
    pub gamma_rate: Option<f64>,
    pub levels: Vec<LevelReport>,
    pub summary: ConvergenceSummary,
    pub moments: Vec<MomentRow>,
}

/// Evenly spread integer points in `[lo, hi]`, at most `count` of them.
fn integer_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if hi < lo {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (count - 1).max(1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Simulates `paths` skeletons for each `n` in the grid and compares
/// `v^T X_{⌊nt⌋}/n` with the gamma marginal `Gamma(2a/b, 2/(b t))` of the
/// limit, or with `a t` when `b = 0`.
pub fn run_convergence(model: &ValidatedModel, config: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if config.n_grid.is_empty() || config.n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::InvalidParameter("n_grid must be non-empty and strictly increasing".into()).into());
    }
    if !(config.t > 0.0) || config.paths < 2 {
        return Err(HarnessError::InvalidParameter("need t > 0 and at least 2 paths".into()).into());
    }
    let coeffs = DerivedCoefficients::compute(model)?;
    let classification = Classification::from_bound(coeffs.spectral.s);
    if classification.regime != Regime::Critical {
        return Err(HarnessError::NotCritical(coeffs.spectral.s).into());
    }
    let exp_b = matrix_exp(&coeffs.btilde, 1.0)?;
    let v = &coeffs.spectral.v;
    let u = &coeffs.spectral.u;
    let t = config.t;
    let marginal = coeffs.gamma_marginal(t);
    let has_immigration = coeffs.betatilde.iter().any(|&x| x > 0.0);

    let mut levels = Vec::with_capacity(config.n_grid.len());
    let mut last_skeletons = Vec::new();
    let mut last_series = Vec::new();
    for &n in &config.n_grid {
        let horizon = (n as f64 * t).floor() as usize;
        let level_seed = derive_seed(config.seed, n as u64);
        let skeletons = skeleton_ensemble(
            model,
            horizon.max(1),
            Stepping::Adaptive(config.max_dt),
            config.paths,
            level_seed,
        )?;
        let proj: Vec<f64> = skeletons
            .iter()
            .map(|sk| scaled_projection(sk, n, v, t))
            .collect::<Result<_, _>>()?;
        let count = proj.len() as f64;
        let pmean = proj.iter().sum::<f64>() / count;
        let pvar = proj.iter().map(|x| (x - pmean).powi(2)).sum::<f64>() / (count - 1.0);

        let (ks, degenerate_error, threshold) = match marginal {
            Some((shape, rate)) => (Some(ks_distance(&proj, shape, rate)?), None, KS_THRESHOLD),
            None => {
                let target = coeffs.a * t;
                let mut errs: Vec<f64> = proj.iter().map(|p| (p - target).abs()).collect();
                (None, Some(median(&mut errs)), 3.0 / (n as f64).sqrt())
            }
        };

        let terminal: Vec<Vector> = skeletons.iter().map(|sk| sk[horizon].clone()).collect();
        let frequencies = if has_immigration {
            Some(relative_frequencies(&terminal, u)?)
        } else {
            None
        };
        let series: Vec<MartingaleSeries> = skeletons
            .iter()
            .map(|sk| martingale_differences_with(sk, &exp_b, &coeffs.betatilde2))
            .collect::<Result<_, _>>()?;
        let martingale = martingale_checks(&series, &config.martingale_ks);
        let moment_ratio = state_moment_growth(&skeletons, config.q, &[horizon])?.points[0].1;

        levels.push(LevelReport {
            n,
            horizon,
            seed: level_seed,
            ks,
            degenerate_error,
            threshold,
            projection_mean: pmean,
            projection_variance: pvar,
            frequencies,
            median_ray_angle: median_ray_angle(&terminal, u),
            martingale,
            moment_ratio,
        });
        last_skeletons = skeletons;
        last_series = series;
    }

    let stats: Vec<f64> = levels
        .iter()
        .map(|l| l.ks.or(l.degenerate_error).unwrap_or(f64::NAN))
        .collect();
    let max_increase = stats
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let last = levels.last().expect("non-empty grid");
    let final_statistic = *stats.last().expect("non-empty grid");
    let weakly_decreasing = stats.len() < 2 || max_increase < KS_STEP_TOLERANCE;
    let summary = ConvergenceSummary {
        final_statistic,
        final_threshold: last.threshold,
        max_increase: if stats.len() < 2 { 0.0 } else { max_increase },
        weakly_decreasing,
        passed: weakly_decreasing && final_statistic < last.threshold,
    };

    let horizon = last.horizon;
    let times = integer_grid(1.min(horizon), horizon, 10);
    let mut moments: Vec<MomentRow> = state_moment_growth(&last_skeletons, config.q, &times)?
        .points
        .into_iter()
        .map(|(x, r)| MomentRow {
            t_or_n: x,
            q: config.q,
            ratio: r,
            series: "state",
        })
        .collect();
    let ns: Vec<usize> = times.into_iter().filter(|&k| k >= 1).collect();
    if !ns.is_empty() {
        let mq = 2 * config.q;
        moments.extend(
            martingale_moment_growth(&last_series, config.q, &ns)?
                .points
                .into_iter()
                .map(|(x, r)| MomentRow {
                    t_or_n: x,
                    q: mq,
                    ratio: r,
                    series: "martingale",
                }),
        );
    }

    Ok(ConvergenceReport {
        model: ModelDocument::from_model(model),
        classification,
        spectral: SpectralDocument::from(&coeffs.spectral),
        coefficients: coeffs.to_document(),
        config: config.clone(),
        degenerate: marginal.is_none(),
        gamma_shape: marginal.map(|m| m.0),
        gamma_rate: marginal.map(|m| m.1),
        levels,
        summary,
        moments,
    })
}
