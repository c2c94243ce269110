//! Path generation for the CBI process and its diffusion limit.
//!
//! The CBI process is simulated as the affine jump-diffusion defined by its
//! generator. Per step of length `dt`, starting from `x`:
//!
//! ```text
//! x_i <- x_i + (β_i + (Bx)_i − x_i ∫(1∧z_i) μ_i(dz)) dt + sqrt(2 c_i x_i^+ dt) ξ_i
//! ```
//!
//! followed by at most one immigration jump (probability `ν(U_d) dt`) and at
//! most one branching jump per type `i` (probability `x_i μ_i(U_d) dt`, rate
//! frozen at the left endpoint), each adding an atom drawn proportionally to
//! its weight. The state is clamped at zero after every step.
//!
//! The limit `dX = a dt + sqrt(b X^+) dW` is available both by Euler steps
//! and exactly through its gamma marginal.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::Vector;
use crate::model::{AtomMeasure, ValidatedModel};
use crate::rng::{path_rng, PathRng};

/// Largest admissible step for fixed-step CBI simulation.
pub const MAX_CBI_DT: f64 = 1e-2;
/// Largest admissible step for the limit Euler scheme.
pub const MAX_LIMIT_DT: f64 = 1e-3;
/// Upper bound on any per-step jump probability.
pub const MAX_JUMP_PROB: f64 = 0.1;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("jump probability {prob:.4} per step exceeds 0.1 at t = {time}; reduce dt")]
    StepTooLarge { prob: f64, time: f64 },
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("dt = {dt} exceeds the maximum {max}")]
    DtTooLarge { dt: f64, max: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("path grid does not contain integer time {0}")]
    GridMismatch(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    #[serde(rename = "CBI-Euler")]
    CbiEuler,
    #[serde(rename = "Limit-Euler")]
    LimitEuler,
    #[serde(rename = "Limit-Exact")]
    LimitExact,
}

/// A simulated trajectory on a time grid starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
    pub stream: u64,
    pub scheme: Scheme,
}

/// Independent draws of the limit at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSample {
    pub t: f64,
    pub values: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

/// Cumulative weights of an atom measure for inverse-CDF sampling.
#[derive(Debug, Clone)]
struct JumpTable {
    points: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    total: f64,
}

impl JumpTable {
    fn new(m: &AtomMeasure) -> Self {
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(m.atoms.len());
        for a in &m.atoms {
            acc += a.weight;
            cumulative.push(acc);
        }
        Self {
            points: m.atoms.iter().map(|a| a.point.clone()).collect(),
            cumulative,
            total: acc,
        }
    }

    fn pick(&self, u: f64) -> &[f64] {
        let target = u * self.total;
        let idx = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.points.len() - 1);
        &self.points[idx]
    }
}

/// How step sizes are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepping {
    /// Constant `dt`; fails with `StepTooLarge` if a jump probability exceeds 0.1.
    Fixed(f64),
    /// `dt = min(max_dt, 0.1 / max jump rate at the current state)`.
    Adaptive(f64),
}

/// The model compiled into the per-step quantities of the scheme.
#[derive(Debug, Clone)]
pub struct CbiDynamics {
    d: usize,
    c: Vec<f64>,
    beta: Vec<f64>,
    b: Vec<f64>,
    nu: JumpTable,
    mu: Vec<JumpTable>,
    compensation: Vec<f64>,
    x0: Vec<f64>,
}

impl CbiDynamics {
    pub fn new(model: &ValidatedModel) -> Self {
        let d = model.d();
        let b = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| model.b()[(i, j)])
            .collect();
        let compensation = model
            .mu()
            .iter()
            .enumerate()
            .map(|(i, m)| m.integrate(|z| z[i].min(1.0)))
            .collect();
        Self {
            d,
            c: model.c().to_vec(),
            beta: model.beta().to_vec(),
            b,
            nu: JumpTable::new(model.nu()),
            mu: model.mu().iter().map(JumpTable::new).collect(),
            compensation,
            x0: model.spec().x0_mean.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    /// Largest jump intensity among immigration and the per-type branching sources.
    fn max_rate(&self, x: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(x)
            .map(|(m, &xi)| xi.max(0.0) * m.total)
            .fold(self.nu.total, f64::max)
    }

    fn step_size(&self, x: &[f64], stepping: Stepping) -> f64 {
        match stepping {
            Stepping::Fixed(dt) => dt,
            Stepping::Adaptive(max_dt) => {
                let rate = self.max_rate(x);
                if rate > 0.0 {
                    // Stay a hair below the cap so rounding in rate * dt cannot exceed it.
                    max_dt.min(MAX_JUMP_PROB * (1.0 - 1e-12) / rate)
                } else {
                    max_dt
                }
            }
        }
    }

    /// One step of length `dt` in place. `next` is scratch of length `d`.
    fn step(
        &self,
        x: &mut [f64],
        next: &mut [f64],
        dt: f64,
        time: f64,
        rng: &mut PathRng,
    ) -> Result<(), SimulationError> {
        let d = self.d;
        for i in 0..d {
            let xi = x[i].max(0.0);
            let bx: f64 = (0..d).map(|j| self.b[i * d + j] * x[j]).sum();
            let drift = self.beta[i] + bx - xi * self.compensation[i];
            let xi_noise: f64 = rng.sample(StandardNormal);
            next[i] = x[i] + drift * dt + (2.0 * self.c[i] * xi * dt).sqrt() * xi_noise;
        }

        let p_imm = self.nu.total * dt;
        if p_imm > MAX_JUMP_PROB {
            return Err(SimulationError::StepTooLarge { prob: p_imm, time });
        }
        let u: f64 = rng.random();
        if u < p_imm {
            let pick: f64 = rng.random();
            for (n, z) in next.iter_mut().zip(self.nu.pick(pick)) {
                *n += z;
            }
        }
        for i in 0..d {
            let p = x[i].max(0.0) * self.mu[i].total * dt;
            if p > MAX_JUMP_PROB {
                return Err(SimulationError::StepTooLarge { prob: p, time });
            }
            let u: f64 = rng.random();
            if u < p {
                let pick: f64 = rng.random();
                for (n, z) in next.iter_mut().zip(self.mu[i].pick(pick)) {
                    *n += z;
                }
            }
        }

        for (xi, &ni) in x.iter_mut().zip(next.iter()) {
            if !ni.is_finite() {
                return Err(SimulationError::NonFinite(time + dt));
            }
            *xi = ni.max(0.0);
        }
        Ok(())
    }

    /// Advances `x` by `duration`, ending exactly at the target time.
    fn advance(
        &self,
        x: &mut [f64],
        scratch: &mut [f64],
        start: f64,
        duration: f64,
        stepping: Stepping,
        rng: &mut PathRng,
    ) -> Result<(), SimulationError> {
        match stepping {
            Stepping::Fixed(dt) => {
                let n = (duration / dt).round() as u64;
                for k in 0..n {
                    self.step(x, scratch, dt, start + k as f64 * dt, rng)?;
                }
            }
            Stepping::Adaptive(_) => {
                let mut elapsed = 0.0;
                let eps = GRID_TOL * duration.max(1.0);
                while duration - elapsed > eps {
                    let h = self.step_size(x, stepping).min(duration - elapsed);
                    self.step(x, scratch, h, start + elapsed, rng)?;
                    elapsed += h;
                }
            }
        }
        Ok(())
    }

    /// States at the given non-decreasing checkpoint times.
    pub fn sample_at(
        &self,
        checkpoints: &[f64],
        stepping: Stepping,
        rng: &mut PathRng,
    ) -> Result<Vec<Vector>, SimulationError> {
        check_stepping(stepping, MAX_CBI_DT)?;
        let mut prev = 0.0;
        for &c in checkpoints {
            if !(c >= prev && c.is_finite()) {
                return Err(SimulationError::InvalidGrid(
                    "checkpoints must be finite, non-negative and non-decreasing".into(),
                ));
            }
            if let Stepping::Fixed(dt) = stepping {
                if !on_grid(c, dt) {
                    return Err(SimulationError::InvalidGrid(format!(
                        "checkpoint {c} is not a multiple of dt = {dt}"
                    )));
                }
            }
            prev = c;
        }
        let mut x = self.x0.clone();
        let mut scratch = vec![0.0; self.d];
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut now = 0.0;
        for &c in checkpoints {
            self.advance(&mut x, &mut scratch, now, c - now, stepping, rng)?;
            now = c;
            out.push(Vector::from_column_slice(&x));
        }
        Ok(out)
    }
}

fn on_grid(t: f64, dt: f64) -> bool {
    let k = t / dt;
    (k - k.round()).abs() <= GRID_TOL * k.max(1.0)
}

fn check_stepping(stepping: Stepping, max: f64) -> Result<(), SimulationError> {
    let dt = match stepping {
        Stepping::Fixed(dt) | Stepping::Adaptive(dt) => dt,
    };
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if dt > max * (1.0 + 1e-12) {
        return Err(SimulationError::DtTooLarge { dt, max });
    }
    Ok(())
}

fn step_count(horizon: f64, dt: f64) -> Result<usize, SimulationError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !on_grid(horizon, dt) {
        return Err(SimulationError::InvalidGrid(format!(
            "horizon {horizon} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok((horizon / dt).round() as usize)
}

/// Full CBI path on the grid `k dt`, `k = 0..T/dt`, from path stream 0.
pub fn simulate_cbi(
    model: &ValidatedModel,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Path, SimulationError> {
    simulate_cbi_stream(model, horizon, dt, seed, 0)
}

pub fn simulate_cbi_stream(
    model: &ValidatedModel,
    horizon: f64,
    dt: f64,
    seed: u64,
    stream: u64,
) -> Result<Path, SimulationError> {
    check_stepping(Stepping::Fixed(dt), MAX_CBI_DT)?;
    let steps = step_count(horizon, dt)?;
    let dynamics = CbiDynamics::new(model);
    let mut rng = path_rng(seed, stream);
    let mut x = dynamics.x0.clone();
    let mut scratch = vec![0.0; dynamics.d];
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x.clone());
    for k in 0..steps {
        dynamics.step(&mut x, &mut scratch, dt, k as f64 * dt, &mut rng)?;
        times.push((k + 1) as f64 * dt);
        states.push(x.clone());
    }
    Ok(Path {
        times,
        states,
        seed,
        stream,
        scheme: Scheme::CbiEuler,
    })
}

/// `n_paths` full paths, path `i` drawn from stream `i`.
pub fn simulate_cbi_ensemble(
    model: &ValidatedModel,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Path>, SimulationError> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_cbi_stream(model, horizon, dt, seed, i))
        .collect()
}

/// For each path `i` (stream `i`), the states at `checkpoints`.
pub fn sample_ensemble(
    model: &ValidatedModel,
    checkpoints: &[f64],
    stepping: Stepping,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<Vector>>, SimulationError> {
    let dynamics = CbiDynamics::new(model);
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| dynamics.sample_at(checkpoints, stepping, &mut path_rng(seed, i)))
        .collect()
}

/// Integer-time skeletons `X_0, X_1, ..., X_horizon` for `n_paths` paths.
pub fn skeleton_ensemble(
    model: &ValidatedModel,
    horizon: usize,
    stepping: Stepping,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<Vector>>, SimulationError> {
    let checkpoints: Vec<f64> = (0..=horizon).map(|k| k as f64).collect();
    sample_ensemble(model, &checkpoints, stepping, n_paths, seed)
}

/// States at `t = 0, 1, ..., ⌊T⌋` of a path whose grid contains every integer.
pub fn integer_skeleton(path: &Path) -> Result<Vec<Vec<f64>>, SimulationError> {
    let horizon = path.times.last().copied().unwrap_or(0.0);
    let last = (horizon + GRID_TOL).floor() as usize;
    let mut out = Vec::with_capacity(last + 1);
    let mut idx = 0;
    for k in 0..=last {
        let target = k as f64;
        while idx < path.times.len() && path.times[idx] < target - GRID_TOL {
            idx += 1;
        }
        match path.times.get(idx) {
            Some(&t) if (t - target).abs() <= GRID_TOL => out.push(path.states[idx].clone()),
            _ => return Err(SimulationError::GridMismatch(k)),
        }
    }
    Ok(out)
}

fn check_limit_params(a: f64, b: f64) -> Result<(), SimulationError> {
    if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!(
            "limit coefficients must be non-negative, got a = {a}, b = {b}"
        )));
    }
    Ok(())
}

/// `n` independent draws of the limit at time `t` started from 0:
/// `a t` when `b = 0`, otherwise `Gamma(shape 2a/b, rate 2/(b t))`
/// (identically zero when `a = 0`).
pub fn sample_limit_exact(
    a: f64,
    b: f64,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<LimitSample, SimulationError> {
    check_limit_params(a, b)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!("t must be positive, got {t}")));
    }
    let values = if b == 0.0 {
        vec![a * t; n]
    } else if a == 0.0 {
        vec![0.0; n]
    } else {
        let shape = 2.0 * a / b;
        let scale = b * t / 2.0;
        let gamma = Gamma::new(shape, scale)
            .map_err(|e| SimulationError::InvalidParameter(e.to_string()))?;
        let mut rng = path_rng(seed, 0);
        (0..n).map(|_| gamma.sample(&mut rng)).collect()
    };
    Ok(LimitSample { t, values, a, b })
}

fn limit_step(x: f64, a: f64, b: f64, dt: f64, rng: &mut PathRng) -> f64 {
    let xi: f64 = rng.sample(StandardNormal);
    (x + a * dt + (b * x.max(0.0) * dt).sqrt() * xi).max(0.0)
}

/// Euler path of `dX = a dt + sqrt(b X^+) dW`, clamped at zero.
pub fn simulate_limit_euler(
    a: f64,
    b: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
    x0: f64,
) -> Result<Path, SimulationError> {
    simulate_limit_euler_stream(a, b, horizon, dt, seed, 0, x0)
}

pub fn simulate_limit_euler_stream(
    a: f64,
    b: f64,
    horizon: f64,
    dt: f64,
    seed: u64,
    stream: u64,
    x0: f64,
) -> Result<Path, SimulationError> {
    check_limit_params(a, b)?;
    check_stepping(Stepping::Fixed(dt), MAX_LIMIT_DT)?;
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(SimulationError::InvalidParameter(format!("x0 must be non-negative, got {x0}")));
    }
    let steps = step_count(horizon, dt)?;
    let mut rng = path_rng(seed, stream);
    let mut x = x0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(vec![x]);
    for k in 0..steps {
        x = limit_step(x, a, b, dt, &mut rng);
        if !x.is_finite() {
            return Err(SimulationError::NonFinite((k + 1) as f64 * dt));
        }
        times.push((k + 1) as f64 * dt);
        states.push(vec![x]);
    }
    Ok(Path {
        times,
        states,
        seed,
        stream,
        scheme: Scheme::LimitEuler,
    })
}

/// Terminal values at `t` of `n` Euler paths of the limit, path `i` on stream `i`.
pub fn limit_euler_terminal(
    a: f64,
    b: f64,
    t: f64,
    dt: f64,
    n: usize,
    seed: u64,
    x0: f64,
) -> Result<Vec<f64>, SimulationError> {
    check_limit_params(a, b)?;
    check_stepping(Stepping::Fixed(dt), MAX_LIMIT_DT)?;
    let steps = step_count(t, dt)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            for _ in 0..steps {
                x = limit_step(x, a, b, dt, &mut rng);
            }
            if x.is_finite() {
                Ok(x)
            } else {
                Err(SimulationError::NonFinite(t))
            }
        })
        .collect()
}
