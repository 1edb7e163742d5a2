#![allow(dead_code)]

use dmhe::model::PartitionedLinearModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(r: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0))
}

pub fn vec(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0))
}

pub fn spd(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = mat(r, n, n);
    &g * g.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    dmhe::linalg::spectral_radius(a).unwrap()
}

/// Random coupled model with the given block sizes, `A` rescaled to spectral radius `rho`.
pub fn random_model(r: &mut ChaCha8Rng, state_dims: &[usize], output_dims: &[usize], rho: f64) -> PartitionedLinearModel {
    let nx: usize = state_dims.iter().sum();
    let a = mat(r, nx, nx);
    let a = &a * (rho / spectral_radius(&a));
    PartitionedLinearModel::from_global(
        state_dims.to_vec(),
        output_dims.to_vec(),
        &a,
        state_dims.iter().zip(output_dims).map(|(&m, &o)| mat(r, o, m)).collect(),
        state_dims.iter().map(|&m| spd(r, m) * 0.2).collect(),
        output_dims.iter().map(|&o| spd(r, o)).collect(),
        state_dims.iter().map(|&m| spd(r, m)).collect(),
    )
    .unwrap()
}
