//! Random fixtures shared by unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0))
}

pub fn random_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0))
}

pub fn random_spd(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = random_matrix(r, n, n);
    &g * g.transpose() + DMatrix::identity(n, n) * 0.5
}
