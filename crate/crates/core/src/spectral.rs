//! Frobenius–Perron machinery for essentially non-negative matrices.
//!
//! An essentially non-negative matrix `A` (non-negative off-diagonal) is
//! irreducible exactly when `e^{tA}` is entrywise positive for `t > 0`. In that
//! case the spectral bound `s(A)` is a simple eigenvalue with strictly
//! positive right and left eigenvectors `u`, `v`, and
//! `e^{-s t} e^{tA} → Π = u v^T` exponentially fast.

use std::collections::VecDeque;

use thiserror::Error;

use crate::linalg::{all_finite, norm_one, Mat, Vector};
use crate::quadrature::{simpson_matrix, QuadratureError};

/// Off-diagonal entries at or below this are treated as absent edges.
pub const EDGE_TOL: f64 = 1e-12;
/// Entry threshold for `positivity_check`.
pub const POSITIVITY_TOL: f64 = 1e-14;
/// Spectral gaps below this are rejected as numerically degenerate.
pub const MIN_GAP: f64 = 1e-10;
/// Calibration grid for the decay amplitude: `t = 0, 0.5, ..., 50`.
pub const CALIBRATION_STEP: f64 = 0.5;
pub const CALIBRATION_HORIZON: f64 = 50.0;
/// Safety factor applied to the calibrated amplitude.
pub const CALIBRATION_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("matrix exponential overflowed (non-finite result)")]
    NonFinite,
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("off-diagonal entry ({row},{col}) = {value:e} is negative")]
    NotEssentiallyNonnegative { row: usize, col: usize, value: f64 },
    #[error("matrix is not irreducible")]
    NotIrreducible,
    #[error("eigen solver failure: {0}")]
    EigenSolverFailure(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

// Padé(13) coefficients and the scaling threshold theta_13.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `e^{M}` by scaling and squaring with a degree-13 Padé approximant.
fn expm(m: &Mat) -> Result<Mat, SpectralError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(SpectralError::NotSquare(n, m.ncols()));
    }
    if !all_finite(m) {
        return Err(SpectralError::NonFinite);
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = norm_one(m);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(SpectralError::NonFinite);
    }
    let a = m * 2f64.powi(-squarings);
    let id = Mat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| SpectralError::EigenSolverFailure("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !all_finite(&r) {
        return Err(SpectralError::NonFinite);
    }
    Ok(r)
}

fn check_square(a: &Mat) -> Result<usize, SpectralError> {
    if a.nrows() != a.ncols() {
        Err(SpectralError::NotSquare(a.nrows(), a.ncols()))
    } else {
        Ok(a.nrows())
    }
}

pub fn is_essentially_nonnegative(a: &Mat) -> bool {
    first_negative_off_diagonal(a).is_none()
}

fn first_negative_off_diagonal(a: &Mat) -> Option<SpectralError> {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] < -EDGE_TOL {
                return Some(SpectralError::NotEssentiallyNonnegative {
                    row: i + 1,
                    col: j + 1,
                    value: a[(i, j)],
                });
            }
        }
    }
    None
}

/// `e^{tA}`. For essentially non-negative `A` and `t >= 0`, tiny negative
/// round-off entries (above `-1e-12`) are clamped to zero.
pub fn matrix_exp(a: &Mat, t: f64) -> Result<Mat, SpectralError> {
    check_square(a)?;
    let mut r = expm(&(a * t))?;
    if t >= 0.0 && is_essentially_nonnegative(a) {
        for x in r.iter_mut() {
            if *x < 0.0 && *x >= -EDGE_TOL {
                *x = 0.0;
            }
        }
    }
    Ok(r)
}

fn reachable_from_zero(d: usize, edge: impl Fn(usize, usize) -> bool) -> usize {
    let mut seen = vec![false; d];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..d {
            if !seen[j] && i != j && edge(i, j) {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count
}

/// Strong connectivity of the graph with an edge `i -> j` whenever `i != j`
/// and `a_{i,j} > 1e-12`. Every `1x1` matrix is irreducible.
pub fn is_irreducible(a: &Mat) -> Result<bool, SpectralError> {
    let d = check_square(a)?;
    if let Some(err) = first_negative_off_diagonal(a) {
        return Err(err);
    }
    if d <= 1 {
        return Ok(true);
    }
    let forward = reachable_from_zero(d, |i, j| a[(i, j)] > EDGE_TOL);
    let backward = reachable_from_zero(d, |i, j| a[(j, i)] > EDGE_TOL);
    Ok(forward == d && backward == d)
}

/// True iff every entry of `e^{tA}` is positive, judged on
/// `e^{t(A − mI)} = e^{−mt} e^{tA}` with `m` the smallest diagonal entry so
/// that a strongly negative diagonal cannot push entries under `1e-14`.
pub fn positivity_check(a: &Mat, t: f64) -> Result<bool, SpectralError> {
    if let Some(err) = first_negative_off_diagonal(a) {
        return Err(err);
    }
    let d = check_square(a)?;
    let m = a.diagonal().min();
    let e = matrix_exp(&(a - Mat::identity(d, d) * m), t)?;
    Ok(e.iter().all(|&x| x > POSITIVITY_TOL))
}

/// Perron data of an irreducible essentially non-negative matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub a: Mat,
    /// Spectral bound `max Re λ`.
    pub s: f64,
    /// Right Perron vector, coordinates sum to one.
    pub u: Vector,
    /// Left Perron vector, `v^T u = 1`.
    pub v: Vector,
    /// `u v^T`.
    pub pi: Mat,
    /// Decay rate, half the spectral gap. `+∞` when `d = 1`.
    pub kappa: f64,
    /// Decay amplitude, calibrated on `[0, 50]`. Zero when `d = 1`.
    pub cconst: f64,
    pub irreducible: bool,
}

fn null_vector(m: &Mat) -> Result<Vector, SpectralError> {
    let svd = m.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| SpectralError::EigenSolverFailure("SVD did not converge".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| SpectralError::EigenSolverFailure("empty spectrum".into()))?;
    let mut x: Vector = v_t.row(idx).transpose();
    let (imax, _) = x
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty");
    if x[imax] < 0.0 {
        x = -x;
    }
    Ok(x)
}

/// Computes the spectral bound, the normalized Perron pair, the projection
/// `Π`, the half-gap decay rate `κ`, and a calibrated amplitude `c` with
/// `‖e^{-st}e^{tA} − Π‖_F ≤ c e^{-κt}` on the calibration grid.
pub fn perron(a: &Mat) -> Result<SpectralSummary, SpectralError> {
    let d = check_square(a)?;
    if !is_irreducible(a)? {
        return Err(SpectralError::NotIrreducible);
    }
    if d == 1 {
        let one = Mat::from_element(1, 1, 1.0);
        return Ok(SpectralSummary {
            a: a.clone(),
            s: a[(0, 0)],
            u: Vector::from_element(1, 1.0),
            v: Vector::from_element(1, 1.0),
            pi: one,
            kappa: f64::INFINITY,
            cconst: 0.0,
            irreducible: true,
        });
    }
    if !all_finite(a) {
        return Err(SpectralError::NonFinite);
    }

    let eig = a.complex_eigenvalues();
    let s0 = eig
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !s0.is_finite() {
        return Err(SpectralError::EigenSolverFailure("non-finite eigenvalues".into()));
    }

    let shifted = a - Mat::identity(d, d) * s0;
    let mut u = null_vector(&shifted)?;
    let mut v = null_vector(&shifted.transpose())?;
    u /= u.sum();
    let vu = v.dot(&u);
    if vu <= 0.0 {
        return Err(SpectralError::EigenSolverFailure(
            "left and right Perron vectors are orthogonal".into(),
        ));
    }
    v /= vu;
    if u.iter().chain(v.iter()).any(|&x| x <= 0.0) {
        return Err(SpectralError::EigenSolverFailure(
            "Perron vector is not strictly positive".into(),
        ));
    }
    // Rayleigh-quotient refinement of the Perron root.
    let s = v.dot(&(a * &u));

    let closest = eig
        .iter()
        .enumerate()
        .min_by(|x, y| {
            let dx = (x.1.re - s).hypot(x.1.im);
            let dy = (y.1.re - s).hypot(y.1.im);
            dx.total_cmp(&dy)
        })
        .map(|(i, _)| i)
        .expect("d >= 2");
    let second = eig
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != closest)
        .map(|(_, z)| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = s - second;
    if !(gap >= MIN_GAP) {
        return Err(SpectralError::EigenSolverFailure(format!(
            "degenerate spectral gap {gap:e}"
        )));
    }
    let kappa = 0.5 * gap;
    let pi = &u * v.transpose();

    let mut summary = SpectralSummary {
        a: a.clone(),
        s,
        u,
        v,
        pi,
        kappa,
        cconst: 0.0,
        irreducible: true,
    };
    summary.cconst = calibrate_amplitude(&summary)?;
    Ok(summary)
}

/// Evaluates `D(t) = e^{t(A - sI)}(I - Π) = e^{-st}e^{tA} - Π` on the grid
/// `0, h, 2h, ...` through the semigroup identity `D(kh) = D(h)^k`, so the
/// decaying part is not swamped by round-off in the `Π` component.
pub struct DeviationGrid {
    step: Mat,
    current: Mat,
}

impl DeviationGrid {
    pub fn new(summary: &SpectralSummary, h: f64) -> Result<Self, SpectralError> {
        let d = summary.a.nrows();
        let complement = Mat::identity(d, d) - &summary.pi;
        let shifted = &summary.a - Mat::identity(d, d) * summary.s;
        let step = expm(&(shifted * h))? * &complement;
        Ok(Self {
            step,
            current: complement,
        })
    }
}

impl Iterator for DeviationGrid {
    type Item = Mat;

    fn next(&mut self) -> Option<Mat> {
        let out = self.current.clone();
        self.current = &self.step * &self.current;
        Some(out)
    }
}

/// `‖e^{-st}e^{tA} − Π‖_F`, evaluated as `‖e^{r(A-sI)}(I-Π) D(h)^k‖_F` with
/// `t = kh + r`, `h` the calibration step.
pub fn deviation_from_projection(summary: &SpectralSummary, t: f64) -> Result<f64, SpectralError> {
    let d = summary.a.nrows();
    if d == 1 {
        return Ok(0.0);
    }
    let k = (t / CALIBRATION_STEP).floor().max(0.0) as usize;
    let r = (t - k as f64 * CALIBRATION_STEP).max(0.0);
    let grid = DeviationGrid::new(summary, CALIBRATION_STEP)?;
    let dk = grid.skip(k).next().expect("infinite iterator");
    let shifted = &summary.a - Mat::identity(d, d) * summary.s;
    let lead = expm(&(shifted * r))?;
    Ok((lead * dk).norm())
}

fn calibrate_amplitude(summary: &SpectralSummary) -> Result<f64, SpectralError> {
    let steps = (CALIBRATION_HORIZON / CALIBRATION_STEP).round() as usize;
    let grid = DeviationGrid::new(summary, CALIBRATION_STEP)?;
    let mut worst: f64 = 0.0;
    for (k, dev) in grid.take(steps + 1).enumerate() {
        let t = k as f64 * CALIBRATION_STEP;
        worst = worst.max(dev.norm() * (summary.kappa * t).exp());
    }
    Ok(CALIBRATION_MARGIN * worst)
}

/// `c e^{-κ t}`.
pub fn decay_envelope(summary: &SpectralSummary, t: f64) -> f64 {
    if summary.cconst == 0.0 {
        return 0.0;
    }
    summary.cconst * (-summary.kappa * t).exp()
}

/// `(1/t) ∫_0^t e^{-s r} e^{rA} dr` by composite Simpson with `4⌈t⌉` panels.
pub fn cesaro_average(a: &Mat, t: f64) -> Result<Mat, SpectralError> {
    let summary = perron(a)?;
    let d = a.nrows();
    let shifted = a - Mat::identity(d, d) * summary.s;
    let panels = 4 * (t.ceil() as usize).max(1);
    let integral = simpson_matrix(0.0, t, panels, d, d, |r| expm(&(&shifted * r)))?;
    Ok(integral / t)
}
