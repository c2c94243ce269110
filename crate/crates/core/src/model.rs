//! Admissible CBI parameter sets.
//!
//! A model is the tuple `(d, c, beta, B, nu, mu_1..mu_d)` together with the
//! mean of the (deterministic) initial state. Jump measures are finite lists
//! of weighted atoms on `R_+^d \ {0}`, so every integral against them is an
//! exact finite sum.

use std::fmt;

use log::warn;
use thiserror::Error;

use crate::linalg::{Mat, Vector};

/// Entries in `[-CLAMP_TOL, 0)` are treated as round-off and clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn new(point: Vec<f64>, weight: f64) -> Self {
        Self { point, weight }
    }

    pub fn norm(&self) -> f64 {
        self.point.iter().map(|z| z * z).sum::<f64>().sqrt()
    }
}

/// A finite measure on `U_d` given by weighted atoms. The empty list is the
/// zero measure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomMeasure {
    pub atoms: Vec<Atom>,
}

impl AtomMeasure {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn single(point: Vec<f64>, weight: f64) -> Self {
        Self::new(vec![Atom::new(point, weight)])
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total mass `m(U_d)`.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `∫ f(z) m(dz)`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(&a.point)).sum()
    }

    /// `∫ z m(dz)`.
    pub fn first_moment(&self, d: usize) -> Vector {
        let mut out = Vector::zeros(d);
        for a in &self.atoms {
            for (o, z) in out.iter_mut().zip(&a.point) {
                *o += a.weight * z;
            }
        }
        out
    }

    /// `∫ z z^T m(dz)`.
    pub fn second_moment_matrix(&self, d: usize) -> Mat {
        let mut out = Mat::zeros(d, d);
        for a in &self.atoms {
            let z = Vector::from_column_slice(&a.point);
            out += (&z * z.transpose()) * a.weight;
        }
        out
    }

    /// `∫ ‖z‖^q 1{‖z‖ ≥ 1} m(dz)`.
    pub fn tail_moment(&self, q: u32) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.norm() >= 1.0)
            .map(|a| a.weight * a.norm().powi(q as i32))
            .sum()
    }

    /// `∫ ‖z‖² m(dz)` split at `‖z‖ = 1` into `(below, at_or_above)`.
    pub fn second_moment_split(&self) -> (f64, f64) {
        let mut below = 0.0;
        let mut above = 0.0;
        for a in &self.atoms {
            let n = a.norm();
            if n < 1.0 {
                below += a.weight * n * n;
            } else {
                above += a.weight * n * n;
            }
        }
        (below, above)
    }
}

/// Raw, unvalidated parameter tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub d: usize,
    pub c: Vec<f64>,
    pub beta: Vec<f64>,
    pub b: Mat,
    pub nu: AtomMeasure,
    pub mu: Vec<AtomMeasure>,
    pub x0_mean: Vec<f64>,
}

impl ModelSpec {
    /// A model of dimension `d` with every parameter zero.
    pub fn zero(d: usize) -> Self {
        Self {
            d,
            c: vec![0.0; d],
            beta: vec![0.0; d],
            b: Mat::zeros(d, d),
            nu: AtomMeasure::zero(),
            mu: vec![AtomMeasure::zero(); d],
            x0_mean: vec![0.0; d],
        }
    }

    pub fn validate(self) -> Result<ValidatedModel, ValidationErrors> {
        validate(self)
    }
}

/// A single violated admissibility condition. Matrix and vector indices are
/// 1-based, matching the usual mathematical notation `b_{i,j}`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationIssue {
    #[error("dimension d must be positive")]
    ZeroDimension,
    #[error("{field}: expected length {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("{field}: non-finite value")]
    NonFinite { field: String },
    #[error("NegativeOffDiagonal({row},{col})")]
    NegativeOffDiagonal { row: usize, col: usize },
    #[error("NegativeParameter({name}, {index})")]
    NegativeParameter { name: String, index: usize },
    #[error("AtomOutsideUd({measure}, {index})")]
    AtomOutsideUd { measure: String, index: usize },
    #[error("NonpositiveWeight({measure}, {index})")]
    NonpositiveWeight { measure: String, index: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationErrors(pub Vec<ValidationIssue>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "invalid parameters: {}", parts.join("; "))
    }
}

impl ValidationErrors {
    pub fn issues(&self) -> &[ValidationIssue] {
        &self.0
    }
}

/// An admissible parameter set. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    spec: ModelSpec,
}

impl ValidatedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn into_spec(self) -> ModelSpec {
        self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn c(&self) -> &[f64] {
        &self.spec.c
    }

    pub fn beta(&self) -> &[f64] {
        &self.spec.beta
    }

    pub fn b(&self) -> &Mat {
        &self.spec.b
    }

    pub fn nu(&self) -> &AtomMeasure {
        &self.spec.nu
    }

    pub fn mu(&self) -> &[AtomMeasure] {
        &self.spec.mu
    }

    pub fn x0_mean(&self) -> Vector {
        Vector::from_column_slice(&self.spec.x0_mean)
    }

    /// Re-runs validation on the wrapped spec. Always returns an equal model.
    pub fn revalidate(self) -> Result<Self, ValidationErrors> {
        validate(self.spec)
    }
}

fn clamp_small_negative(x: &mut f64, what: &str) {
    if *x < 0.0 && *x >= -CLAMP_TOL {
        warn!("{what}: clamping {x:e} to 0");
        *x = 0.0;
    }
}

fn check_nonneg_vec(
    name: &str,
    values: &mut [f64],
    d: usize,
    issues: &mut Vec<ValidationIssue>,
) {
    if values.len() != d {
        issues.push(ValidationIssue::DimensionMismatch {
            field: name.to_string(),
            expected: d,
            found: values.len(),
        });
        return;
    }
    for (i, x) in values.iter_mut().enumerate() {
        if !x.is_finite() {
            issues.push(ValidationIssue::NonFinite {
                field: format!("{name}[{}]", i + 1),
            });
            continue;
        }
        clamp_small_negative(x, name);
        if *x < 0.0 {
            issues.push(ValidationIssue::NegativeParameter {
                name: name.to_string(),
                index: i + 1,
            });
        }
    }
}

fn check_measure(
    name: &str,
    measure: &mut AtomMeasure,
    d: usize,
    issues: &mut Vec<ValidationIssue>,
) {
    for (k, atom) in measure.atoms.iter_mut().enumerate() {
        if atom.point.len() != d {
            issues.push(ValidationIssue::DimensionMismatch {
                field: format!("{name} atom {}", k + 1),
                expected: d,
                found: atom.point.len(),
            });
            continue;
        }
        if !atom.weight.is_finite() || atom.point.iter().any(|z| !z.is_finite()) {
            issues.push(ValidationIssue::NonFinite {
                field: format!("{name} atom {}", k + 1),
            });
            continue;
        }
        if atom.weight <= 0.0 {
            issues.push(ValidationIssue::NonpositiveWeight {
                measure: name.to_string(),
                index: k + 1,
            });
        }
        for z in atom.point.iter_mut() {
            clamp_small_negative(z, name);
        }
        let negative = atom.point.iter().any(|&z| z < 0.0);
        let zero = atom.point.iter().all(|&z| z == 0.0);
        if negative || zero {
            issues.push(ValidationIssue::AtomOutsideUd {
                measure: name.to_string(),
                index: k + 1,
            });
        }
    }
}

/// Checks every admissibility condition and collects all violations.
pub fn validate(mut spec: ModelSpec) -> Result<ValidatedModel, ValidationErrors> {
    let d = spec.d;
    let mut issues = Vec::new();
    if d == 0 {
        return Err(ValidationErrors(vec![ValidationIssue::ZeroDimension]));
    }
    check_nonneg_vec("c", &mut spec.c, d, &mut issues);
    check_nonneg_vec("beta", &mut spec.beta, d, &mut issues);
    check_nonneg_vec("x0_mean", &mut spec.x0_mean, d, &mut issues);

    if spec.b.nrows() != d || spec.b.ncols() != d {
        issues.push(ValidationIssue::DimensionMismatch {
            field: "B".into(),
            expected: d,
            found: if spec.b.nrows() != d {
                spec.b.nrows()
            } else {
                spec.b.ncols()
            },
        });
    } else {
        for i in 0..d {
            for j in 0..d {
                let x = &mut spec.b[(i, j)];
                if !x.is_finite() {
                    issues.push(ValidationIssue::NonFinite {
                        field: format!("B[{},{}]", i + 1, j + 1),
                    });
                    continue;
                }
                if i != j {
                    clamp_small_negative(x, "B");
                    if *x < 0.0 {
                        issues.push(ValidationIssue::NegativeOffDiagonal {
                            row: i + 1,
                            col: j + 1,
                        });
                    }
                }
            }
        }
    }

    check_measure("nu", &mut spec.nu, d, &mut issues);
    if spec.mu.len() != d {
        issues.push(ValidationIssue::DimensionMismatch {
            field: "mu".into(),
            expected: d,
            found: spec.mu.len(),
        });
    } else {
        for (i, m) in spec.mu.iter_mut().enumerate() {
            check_measure(&format!("mu_{}", i + 1), m, d, &mut issues);
        }
    }

    if issues.is_empty() {
        Ok(ValidatedModel { spec })
    } else {
        Err(ValidationErrors(issues))
    }
}

/// Outcome of the moment condition `∫‖z‖^q 1{‖z‖≥1} m(dz) < ∞` for `nu` and
/// every `mu_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentOrder {
    pub q: u32,
    pub verified: bool,
    pub nu_tail: f64,
    pub mu_tails: Vec<f64>,
}

/// Evaluates the order-`q` tail moments by atom summation. For finite atom
/// measures this holds unless a sum overflows.
pub fn check_moment_condition(model: &ValidatedModel, q: u32) -> MomentOrder {
    let nu_tail = model.nu().tail_moment(q);
    let mu_tails: Vec<f64> = model.mu().iter().map(|m| m.tail_moment(q)).collect();
    let verified = nu_tail.is_finite() && mu_tails.iter().all(|x| x.is_finite());
    MomentOrder {
        q,
        verified,
        nu_tail,
        mu_tails,
    }
}
