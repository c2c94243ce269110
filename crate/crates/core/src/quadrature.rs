//! Quadrature rules for smooth scalar and matrix-valued integrands on an interval.

use std::f64::consts::PI;

use thiserror::Error;

use crate::linalg::{all_finite, Mat};

/// Node count used for every single integral over `[0, 1]`.
pub const DEFAULT_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
    #[error("rule needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
}

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are the roots of `P_n`, found by Newton iteration from the
    /// Chebyshev-like initial guesses `cos(π(i - 1/4)/(n + 1/2))`.
    pub fn new(n: usize) -> Result<Self, QuadratureError> {
        if n == 0 {
            return Err(QuadratureError::TooFewPoints { min: 1, got: 0 });
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F>(&self, a: f64, b: f64, mut f: F) -> Result<f64, QuadratureError>
    where
        F: FnMut(f64) -> f64,
    {
        let mut acc = 0.0;
        for (x, w) in self.mapped(a, b) {
            let y = f(x);
            if !y.is_finite() {
                return Err(QuadratureError::NonFinite(x));
            }
            acc += w * y;
        }
        Ok(acc)
    }

    /// Integrates a matrix-valued function. `rows x cols` fixes the output shape.
    pub fn integrate_matrix<F, E>(
        &self,
        a: f64,
        b: f64,
        rows: usize,
        cols: usize,
        mut f: F,
    ) -> Result<Mat, E>
    where
        F: FnMut(f64) -> Result<Mat, E>,
        E: From<QuadratureError>,
    {
        let mut acc = Mat::zeros(rows, cols);
        for (x, w) in self.mapped(a, b) {
            let y = f(x)?;
            if !all_finite(&y) {
                return Err(QuadratureError::NonFinite(x).into());
            }
            acc += y * w;
        }
        Ok(acc)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Composite Simpson rule with an even number of panels.
pub fn simpson_matrix<F, E>(
    a: f64,
    b: f64,
    panels: usize,
    rows: usize,
    cols: usize,
    mut f: F,
) -> Result<Mat, E>
where
    F: FnMut(f64) -> Result<Mat, E>,
    E: From<QuadratureError>,
{
    if panels < 2 || panels % 2 != 0 {
        return Err(QuadratureError::TooFewPoints {
            min: 2,
            got: panels,
        }
        .into());
    }
    let h = (b - a) / panels as f64;
    let mut acc = Mat::zeros(rows, cols);
    for k in 0..=panels {
        let x = a + h * k as f64;
        let coef = if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let y = f(x)?;
        if !all_finite(&y) {
            return Err(QuadratureError::NonFinite(x).into());
        }
        acc += y * coef;
    }
    Ok(acc * (h / 3.0))
}
