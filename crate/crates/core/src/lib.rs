//! Numerical laboratory for critical, irreducible multi-type continuous-state
//! branching processes with immigration (CBI processes).
//!
//! The crate computes the derived quantities that govern the diffusion
//! approximation of such processes (effective branching matrix, immigration
//! mean, branching covariances, Perron data), simulates both the CBI process
//! and its squared-Bessel limit, and checks the convergence claims with Monte
//! Carlo statistics.
//!
//! Module map:
//!
//! * [`model`]: admissible parameter sets with finite-atom jump measures.
//! * [`spectral`]: matrix exponential, irreducibility, Perron pair, decay envelope.
//! * [`quadrature`]: Gauss–Legendre and Simpson rules for matrix-valued integrands.
//! * [`coefficients`]: effective branching matrix, covariances, limit-SDE coefficients.
//! * [`moments`]: classification, exact mean evolution, mean asymptotics.
//! * [`simulate`]: CBI jump-diffusion paths and the limit diffusion.
//! * [`harness`]: martingale differences, KS statistics, convergence reports.
//! * [`io`]: model documents and CSV writers used by the CLI.

pub mod coefficients;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod spectral;

mod error;

pub use coefficients::DerivedCoefficients;
pub use error::{Error, Result};
pub use model::{AtomMeasure, ModelSpec, ValidatedModel};
pub use moments::{Classification, Regime};
pub use spectral::SpectralSummary;
