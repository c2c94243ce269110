//! Criticality classification and the exact first-moment evolution
//! `E(X_t) = e^{tB̃} E(X_0) + (∫_0^t e^{uB̃} du) β̃`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{effective_branching, immigration_mean, CRITICAL_TOL};
use crate::linalg::{Mat, Vector};
use crate::model::ValidatedModel;
use crate::quadrature::GaussLegendre;
use crate::spectral::{matrix_exp, perron, SpectralError};
use crate::Result;

/// `B̃` is inverted directly only below this condition number.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentsError {
    #[error("time must be non-negative and finite, got {0}")]
    InvalidTime(f64),
    #[error("subcritical B̃ is numerically singular")]
    SingularBtilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub regime: Regime,
    pub s: f64,
}

impl Classification {
    pub fn from_bound(s: f64) -> Self {
        let regime = if s.abs() < CRITICAL_TOL {
            Regime::Critical
        } else if s < 0.0 {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        };
        Self { regime, s }
    }
}

/// Classifies an irreducible `B̃` by the sign of its spectral bound.
pub fn classify_matrix(btilde: &Mat) -> Result<Classification> {
    if !crate::spectral::is_irreducible(btilde)? {
        return Err(SpectralError::NotIrreducible.into());
    }
    Ok(Classification::from_bound(perron(btilde)?.s))
}

pub fn classify(model: &ValidatedModel) -> Result<Classification> {
    classify_matrix(&effective_branching(model))
}

fn condition_number(m: &Mat) -> f64 {
    let sv = m.singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `∫_0^t e^{uB̃} du`: `B̃^{-1}(e^{tB̃} − I)` when `B̃` is well conditioned,
/// otherwise Gauss–Legendre with `⌈4t⌉ + 16` nodes.
pub fn exp_integral(btilde: &Mat, t: f64) -> Result<Mat> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(MomentsError::InvalidTime(t).into());
    }
    let d = btilde.nrows();
    if t == 0.0 {
        return Ok(Mat::zeros(d, d));
    }
    if condition_number(btilde) < MAX_CONDITION {
        if let Some(inv) = btilde.clone().try_inverse() {
            let e = matrix_exp(btilde, t)?;
            return Ok(inv * (e - Mat::identity(d, d)));
        }
    }
    let nodes = (4.0 * t).ceil() as usize + 16;
    let rule = GaussLegendre::new(nodes)?;
    rule.integrate_matrix::<_, crate::Error>(0.0, t, d, d, |u| Ok(matrix_exp(btilde, u)?))
}

fn clamp_nonneg(mut v: Vector) -> Vector {
    for x in v.iter_mut() {
        if *x < 0.0 && *x > -1e-9 * (1.0 + x.abs()) {
            *x = 0.0;
        }
    }
    v
}

/// `E(X_t)` for the model's deterministic initial state.
pub fn mean_at(model: &ValidatedModel, t: f64) -> Result<Vector> {
    let btilde = effective_branching(model);
    let betatilde = immigration_mean(model);
    mean_from(&btilde, &betatilde, &model.x0_mean(), t)
}

/// `e^{tB̃} x0 + (∫_0^t e^{uB̃} du) β̃`.
pub fn mean_from(btilde: &Mat, betatilde: &Vector, x0: &Vector, t: f64) -> Result<Vector> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(MomentsError::InvalidTime(t).into());
    }
    let e = matrix_exp(btilde, t)?;
    let integral = exp_integral(btilde, t)?;
    Ok(clamp_nonneg(e * x0 + integral * betatilde))
}

/// How the mean must be rescaled to converge to [`MeanAsymptote::limit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `lim E(X_t)`.
    None,
    /// `lim t^{-1} E(X_t)`.
    DivideByT,
    /// `lim e^{-st} E(X_t)`.
    MultiplyByExpNegSt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanAsymptote {
    pub regime: Regime,
    pub limit: Vector,
    pub normalization: Normalization,
}

/// Regime-specific limit of the mean:
/// subcritical `−B̃^{-1}β̃`, critical `Πβ̃`, supercritical `Π E(X_0) + s^{-1} Π β̃`.
pub fn mean_asymptote(model: &ValidatedModel) -> Result<MeanAsymptote> {
    let btilde = effective_branching(model);
    let betatilde = immigration_mean(model);
    let summary = perron(&btilde)?;
    let class = Classification::from_bound(summary.s);
    let (limit, normalization) = match class.regime {
        Regime::Subcritical => {
            let inv = btilde
                .clone()
                .try_inverse()
                .filter(|_| condition_number(&btilde) < MAX_CONDITION)
                .ok_or(MomentsError::SingularBtilde)?;
            (-(inv * &betatilde), Normalization::None)
        }
        Regime::Critical => (&summary.pi * &betatilde, Normalization::DivideByT),
        Regime::Supercritical => (
            &summary.pi * model.x0_mean() + (&summary.pi * &betatilde) / summary.s,
            Normalization::MultiplyByExpNegSt,
        ),
    };
    Ok(MeanAsymptote {
        regime: class.regime,
        limit,
        normalization,
    })
}
