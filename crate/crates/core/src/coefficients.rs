//! Derived coefficients of a CBI model.
//!
//! * `B̃`: effective branching matrix, `b_ij + ∫ (z_i − δ_ij)^+ μ_j(dz)`.
//! * `β̃`: immigration mean, `β + ∫ z ν(dz)`.
//! * `C_k`: branching covariances, `2 c_k e_k e_k^T + ∫ z z^T μ_k(dz)`.
//! * `C̄ = Σ_k u_k C_k`, aggregated with the right Perron vector of `B̃`.
//! * `β̃̃ = (∫_0^1 e^{sB̃} ds) β̃`, the unit-time drift, equal to `E(X_1)` when `X_0 = 0`.
//! * `C̃ = Σ_k ∫_0^1 (e_k^T e^{(1−s)B̃} u) e^{sB̃} C_k e^{sB̃^T} ds`.
//! * `V`, the state-independent part of the one-step conditional variance.
//! * `(a, b) = (⟨v, β̃⟩, ⟨C̄v, v⟩)`, the coefficients of the limit diffusion
//!   `dX = a dt + sqrt(b X^+) dW`.

use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{asymmetry, min_sym_eigenvalue, symmetrize, to_rows, Mat, Vector};
use crate::model::ValidatedModel;
use crate::quadrature::{GaussLegendre, DEFAULT_NODES};
use crate::spectral::{matrix_exp, perron, SpectralSummary};
use crate::Result;

/// A model is critical when `|s(B̃)|` is below this.
pub const CRITICAL_TOL: f64 = 1e-9;
/// Symmetry tolerance for `psd_sqrt` inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_TOL, 0)` are round-off; below that is an error.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoefficientError {
    #[error("model is not critical: s(B̃) = {0:e}")]
    NotCritical(f64),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix has negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),
}

fn rule64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(DEFAULT_NODES).expect("positive node count"))
}

/// `B̃` with entries `b_ij + Σ_atoms(μ_j) w (z_i − δ_ij)^+`.
pub fn effective_branching(model: &ValidatedModel) -> Mat {
    let d = model.d();
    let mut out = model.b().clone();
    for (j, mu_j) in model.mu().iter().enumerate() {
        for i in 0..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            out[(i, j)] += mu_j.integrate(|z| (z[i] - delta).max(0.0));
        }
    }
    out
}

/// `β̃ = β + Σ_atoms(ν) w z`.
pub fn immigration_mean(model: &ValidatedModel) -> Vector {
    Vector::from_column_slice(model.beta()) + model.nu().first_moment(model.d())
}

/// `C_k = 2 c_k e_k e_k^T + Σ_atoms(μ_k) w z z^T` for every type `k`.
pub fn branching_covariances(model: &ValidatedModel) -> Vec<Mat> {
    let d = model.d();
    model
        .mu()
        .iter()
        .enumerate()
        .map(|(k, mu_k)| {
            let mut ck = mu_k.second_moment_matrix(d);
            ck[(k, k)] += 2.0 * model.c()[k];
            ck
        })
        .collect()
}

/// `C̄ = Σ_k u_k C_k`.
pub fn aggregate_covariance(ck: &[Mat], u: &Vector) -> Mat {
    let d = u.len();
    ck.iter()
        .zip(u.iter())
        .fold(Mat::zeros(d, d), |acc, (c, &w)| acc + c * w)
}

/// `∫_0^1 e^{sB̃} ds` by 64-node Gauss–Legendre.
pub fn unit_time_integral(btilde: &Mat) -> Result<Mat> {
    let d = btilde.nrows();
    let m = rule64().integrate_matrix::<_, crate::Error>(0.0, 1.0, d, d, |s| {
        Ok(matrix_exp(btilde, s)?)
    })?;
    Ok(m)
}

/// `β̃̃ = (∫_0^1 e^{sB̃} ds) β̃`. Tiny negative round-off is clamped to zero.
pub fn unit_time_drift(btilde: &Mat, betatilde: &Vector) -> Result<Vector> {
    let mut out = unit_time_integral(btilde)? * betatilde;
    for x in out.iter_mut() {
        if *x < 0.0 && *x > -1e-12 {
            *x = 0.0;
        }
    }
    Ok(out)
}

fn check_psd(m: Mat) -> Result<Mat> {
    let m = symmetrize(&m);
    let lo = min_sym_eigenvalue(&m);
    if lo < -PSD_TOL {
        return Err(CoefficientError::NegativeEigenvalue(lo).into());
    }
    Ok(m)
}

/// `C̃` for a critical model, using the Perron summary of `B̃`.
pub fn integrated_covariance(summary: &SpectralSummary, ck: &[Mat]) -> Result<Mat> {
    if summary.s.abs() >= CRITICAL_TOL {
        return Err(CoefficientError::NotCritical(summary.s).into());
    }
    let btilde = &summary.a;
    let d = btilde.nrows();
    let m = rule64().integrate_matrix::<_, crate::Error>(0.0, 1.0, d, d, |s| {
        let left = matrix_exp(btilde, 1.0 - s)? * &summary.u;
        let e = matrix_exp(btilde, s)?;
        let mut acc = Mat::zeros(d, d);
        for (k, c) in ck.iter().enumerate() {
            acc += (&e * c * e.transpose()) * left[k];
        }
        Ok(acc)
    })?;
    check_psd(m)
}

/// `V = ∫_0^1 e^{uB̃} (∫ z z^T ν) e^{uB̃^T} du
///      + Σ_k ∫_0^1 (∫_0^{1−u} e_k^T e^{wB̃} β̃ dw) e^{uB̃} C_k e^{uB̃^T} du`,
/// with a 64 x 64 tensor Gauss–Legendre rule for the nested integral.
pub fn noise_matrix_v(
    model: &ValidatedModel,
    btilde: &Mat,
    betatilde: &Vector,
    ck: &[Mat],
) -> Result<Mat> {
    let d = model.d();
    let nu2 = model.nu().second_moment_matrix(d);
    let rule = rule64();
    let bt = Mat::from_column_slice(d, 1, betatilde.as_slice());
    let m = rule.integrate_matrix::<_, crate::Error>(0.0, 1.0, d, d, |u| {
        let e = matrix_exp(btilde, u)?;
        let mut acc = &e * &nu2 * e.transpose();
        if 1.0 - u > 0.0 {
            let inner = rule.integrate_matrix::<_, crate::Error>(0.0, 1.0 - u, d, 1, |w| {
                Ok(matrix_exp(btilde, w)? * &bt)
            })?;
            for (k, c) in ck.iter().enumerate() {
                acc += (&e * c * e.transpose()) * inner[(k, 0)];
            }
        }
        Ok(acc)
    })?;
    check_psd(m)
}

/// `(a, b) = (⟨v, β̃⟩, ⟨C̄v, v⟩)`, clamped at zero.
pub fn limit_sde_coefficients(betatilde: &Vector, cbar: &Mat, v: &Vector) -> (f64, f64) {
    let a = v.dot(betatilde).max(0.0);
    let b = v.dot(&(cbar * v)).max(0.0);
    (a, b)
}

/// Symmetric positive semidefinite square root.
pub fn psd_sqrt(m: &Mat) -> Result<Mat, CoefficientError> {
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(CoefficientError::NotSymmetric(asym));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for lambda in roots.iter_mut() {
        if *lambda < -PSD_TOL {
            return Err(CoefficientError::NegativeEigenvalue(*lambda));
        }
        *lambda = lambda.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * Mat::from_diagonal(&roots) * q.transpose())))
}

/// Every derived quantity of an irreducible model. `ctilde` is present only
/// for critical models.
#[derive(Debug, Clone)]
pub struct DerivedCoefficients {
    pub btilde: Mat,
    pub betatilde: Vector,
    pub ck: Vec<Mat>,
    pub cbar: Mat,
    pub betatilde2: Vector,
    pub ctilde: Option<Mat>,
    pub v_matrix: Mat,
    pub a: f64,
    pub b: f64,
    pub spectral: SpectralSummary,
}

impl DerivedCoefficients {
    pub fn compute(model: &ValidatedModel) -> Result<Self> {
        let btilde = effective_branching(model);
        let spectral = perron(&btilde)?;
        let betatilde = immigration_mean(model);
        let ck = branching_covariances(model);
        let cbar = symmetrize(&aggregate_covariance(&ck, &spectral.u));
        let betatilde2 = unit_time_drift(&btilde, &betatilde)?;
        let ctilde = if spectral.s.abs() < CRITICAL_TOL {
            Some(integrated_covariance(&spectral, &ck)?)
        } else {
            None
        };
        let v_matrix = noise_matrix_v(model, &btilde, &betatilde, &ck)?;
        let (a, b) = limit_sde_coefficients(&betatilde, &cbar, &spectral.v);
        Ok(Self {
            btilde,
            betatilde,
            ck,
            cbar,
            betatilde2,
            ctilde,
            v_matrix,
            a,
            b,
            spectral,
        })
    }

    pub fn is_critical(&self) -> bool {
        self.spectral.s.abs() < CRITICAL_TOL
    }

    /// Shape and rate of the gamma marginal of the limit at time `t`, or
    /// `None` in the degenerate case `b = 0` (or `a = 0`).
    pub fn gamma_marginal(&self, t: f64) -> Option<(f64, f64)> {
        if self.b > 0.0 && self.a > 0.0 {
            Some((2.0 * self.a / self.b, 2.0 / (self.b * t)))
        } else {
            None
        }
    }

    pub fn to_document(&self) -> CoefficientsDocument {
        CoefficientsDocument {
            btilde: to_rows(&self.btilde),
            betatilde: self.betatilde.iter().copied().collect(),
            ck: self.ck.iter().map(to_rows).collect(),
            cbar: to_rows(&self.cbar),
            betatilde2: self.betatilde2.iter().copied().collect(),
            ctilde: self.ctilde.as_ref().map(to_rows),
            v_matrix: to_rows(&self.v_matrix),
            a: self.a,
            b: self.b,
            s: self.spectral.s,
            u: self.spectral.u.iter().copied().collect(),
            v: self.spectral.v.iter().copied().collect(),
        }
    }
}

/// Serializable view of [`DerivedCoefficients`].
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientsDocument {
    pub btilde: Vec<Vec<f64>>,
    pub betatilde: Vec<f64>,
    pub ck: Vec<Vec<Vec<f64>>>,
    pub cbar: Vec<Vec<f64>>,
    pub betatilde2: Vec<f64>,
    pub ctilde: Option<Vec<Vec<f64>>>,
    pub v_matrix: Vec<Vec<f64>>,
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}
