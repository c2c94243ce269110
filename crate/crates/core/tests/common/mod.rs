#![allow(dead_code)]

use std::path::PathBuf;

use cbi_lab::coefficients::effective_branching;
use cbi_lab::io::load_model;
use cbi_lab::linalg::{from_rows, Mat};
use cbi_lab::model::Atom;
use cbi_lab::spectral::perron;
use cbi_lab::{AtomMeasure, ModelSpec, ValidatedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_fixture(name: &str) -> ValidatedModel {
    load_model(&fixture(name)).unwrap()
}

pub fn reference_spec() -> ModelSpec {
    ModelSpec {
        d: 2,
        c: vec![0.5, 0.5],
        beta: vec![1.0, 0.0],
        b: from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]),
        nu: AtomMeasure::single(vec![1.0, 1.0], 0.5),
        mu: vec![AtomMeasure::zero(), AtomMeasure::zero()],
        x0_mean: vec![0.0, 0.0],
    }
}

pub fn reference() -> ValidatedModel {
    reference_spec().validate().unwrap()
}

fn random_measure<R: Rng>(rng: &mut R, d: usize, max_atoms: usize) -> AtomMeasure {
    let n = rng.random_range(0..=max_atoms);
    let atoms = (0..n)
        .map(|_| {
            let mut point: Vec<f64> = (0..d)
                .map(|_| if rng.random_bool(0.7) { rng.random_range(0.0..1.5) } else { 0.0 })
                .collect();
            let k = rng.random_range(0..d);
            point[k] = point[k].max(0.1);
            Atom::new(point, rng.random_range(0.05..1.0))
        })
        .collect();
    AtomMeasure::new(atoms)
}

/// Random essentially non-negative matrix with the cycle `1 → 2 → … → d → 1`
/// among its edges, hence irreducible.
pub fn random_irreducible<R: Rng>(rng: &mut R, d: usize) -> Mat {
    let mut b = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                b[(i, j)] = rng.random_range(-3.0..0.5);
            } else if rng.random_bool(0.5) {
                b[(i, j)] = rng.random_range(0.05..2.0);
            }
        }
    }
    if d > 1 {
        for i in 0..d {
            b[((i + 1) % d, i)] += rng.random_range(0.1..1.0);
        }
    }
    b
}

/// Essentially non-negative matrix with random sparsity, irreducible or not.
pub fn random_ess_nonneg<R: Rng>(rng: &mut R) -> Mat {
    let d = rng.random_range(1..=5);
    let p = rng.random_range(0.15..0.7);
    Mat::from_fn(d, d, |i, j| {
        if i == j {
            rng.random_range(-4.0..1.0)
        } else if rng.random_bool(p) {
            rng.random_range(0.05..2.0)
        } else {
            0.0
        }
    })
}

/// Random model with parameters drawn by `rng` (not necessarily critical).
pub fn random_spec<R: Rng>(rng: &mut R, d: usize) -> ModelSpec {
    ModelSpec {
        d,
        c: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
        beta: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
        b: random_irreducible(rng, d),
        nu: random_measure(rng, d, 2),
        mu: (0..d).map(|_| random_measure(rng, d, 2)).collect(),
        x0_mean: vec![0.0; d],
    }
}

/// Random critical irreducible model: the diagonal of `B` is shifted by the
/// spectral bound of the effective branching matrix.
pub fn random_critical(seed: u64, d: usize) -> ValidatedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = random_spec(&mut rng, d);
    let s = perron(&effective_branching(&spec.clone().validate().unwrap()))
        .unwrap()
        .s;
    for i in 0..d {
        spec.b[(i, i)] -= s;
    }
    spec.validate().unwrap()
}

pub fn mat_close(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax()
}
