//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number ceiling above which a system is reported as singular.
pub const CONDITION_LIMIT: f64 = 1e14;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigenvalues(m)[0]
}

/// Largest eigenvalue modulus of a square matrix.
///
/// The real Schur iteration is capped. If it stalls, it is retried on a fixed orthogonal
/// similarity of `m`, which has the same spectrum.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::dim("spectral radius of a non-square matrix"));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let radius = |a: DMatrix<f64>| {
        Schur::try_new(a, f64::EPSILON, 10_000)
            .map(|s| s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
    };
    if let Some(r) = radius(m.clone()) {
        return Ok(r);
    }
    let n = m.nrows();
    for shift in 1..=3 {
        let g = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3 + shift) as f64).sin());
        let q = g.qr().q();
        if let Some(r) = radius(q.transpose() * m * &q) {
            return Ok(r);
        }
    }
    Err(Error::Numerical("eigenvalue iteration did not converge".into()))
}

/// Spectral condition number of a symmetric positive definite matrix.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Cholesky factor of an SPD matrix, refusing matrices whose condition exceeds [`CONDITION_LIMIT`].
pub fn spd_factor(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::dim(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    let cond = spd_condition(m);
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::Numerical(format!("{what} is numerically singular (condition {cond:.3e})")));
    }
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_factor(m, what)?.solve(rhs))
}

pub fn spd_solve_vec(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(spd_factor(m, what)?.solve(rhs))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_factor(m, what)?.inverse()))
}

/// `‖r‖²` weighted by the inverse of `weight`, i.e. `rᵀ weight⁻¹ r`.
pub fn inv_weighted_sq(r: &DVector<f64>, weight: &DMatrix<f64>, what: &str) -> Result<f64> {
    let sol = spd_solve_vec(weight, r, what)?;
    Ok(r.dot(&sol))
}

/// Lower-triangular `L⁻¹` where `weight = L Lᵀ`, so that `‖L⁻¹ r‖² = rᵀ weight⁻¹ r`.
pub fn whitening(weight: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = spd_factor(weight, what)?;
    let l = chol.l();
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical(format!("{what}: singular Cholesky factor")))
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stack matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn vstack_vec(parts: &[DVector<f64>]) -> DVector<f64> {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(p);
        r += p.len();
    }
    out
}

/// Fail when `m` is not SPD in the covariance-floor sense: `λ_min < 1e-12·trace`.
pub fn check_covariance(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::CovarianceFloor(format!("{what} has non-finite entries")));
    }
    let lmin = min_eigenvalue(m);
    let floor = 1e-12 * m.trace().abs();
    if !(lmin >= floor && lmin > 0.0) {
        return Err(Error::CovarianceFloor(format!(
            "{what}: min eigenvalue {lmin:.3e} below floor {floor:.3e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitening_reproduces_inverse_weighted_norm() {
        let w = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = DVector::from_vec(vec![0.7, -1.3]);
        let l = whitening(&w, "w").unwrap();
        let direct = inv_weighted_sq(&r, &w, "w").unwrap();
        assert!(((&l * &r).norm_squared() - direct).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_factor(&m, "m"), Err(Error::Numerical(_))));
    }

    #[test]
    fn block_diag_layout() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(2, 2, 3.0);
        let d = block_diag(&[a, b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 0)], 2.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(2, 1)], 3.0);
    }
}
