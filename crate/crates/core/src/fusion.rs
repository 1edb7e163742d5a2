//! Exact algebra for combining and rewriting weighted quadratic forms.
//!
//! Every arrival-cost step reduces to one of two moves: absorbing a linear
//! measurement term `‖Cx − b‖²_{B⁻¹}` into a prior `‖x − a‖²_{A⁻¹}`
//! ([`fuse_quadratics`]), or rewriting a norm taken through a tall matrix as a
//! norm on `x` itself ([`reduce_norm_through_matrix`]).

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize, CONDITION_LIMIT};

/// `‖x − center‖²_{weight⁻¹} + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub center: DVector<f64>,
    /// Inverse weight: the form penalizes with `weight⁻¹`.
    pub weight: DMatrix<f64>,
    pub offset: f64,
}

impl QuadraticForm {
    pub fn new(center: DVector<f64>, weight: DMatrix<f64>, offset: f64) -> Result<Self> {
        if weight.nrows() != center.len() || !weight.is_square() {
            return Err(Error::dim(format!(
                "weight {}x{} does not match center of length {}",
                weight.nrows(),
                weight.ncols(),
                center.len()
            )));
        }
        if !linalg::is_symmetric(&weight, 1e-12) {
            return Err(Error::Numerical("quadratic-form weight is not symmetric".into()));
        }
        if linalg::min_eigenvalue(&weight) <= 0.0 {
            return Err(Error::Numerical("quadratic-form weight is not positive definite".into()));
        }
        if !(offset >= 0.0) {
            return Err(Error::Numerical(format!("quadratic-form offset {offset} is negative")));
        }
        Ok(Self { center, weight, offset })
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        let d = x - &self.center;
        Ok(linalg::inv_weighted_sq(&d, &self.weight, "quadratic-form weight")? + self.offset)
    }
}

/// Combine `J1(x) = ‖x − a‖²_{A⁻¹}` and `J2(x) = ‖Cx − b‖²_{B⁻¹}` into
/// `‖x − σ‖²_{H⁻¹} + π`.
///
/// `H = A − ACᵀ(CACᵀ + B)⁻¹CA`, `σ = a + ACᵀ(CACᵀ + B)⁻¹(b − Ca)`, and
/// `π = J1(σ) + J2(σ)`, evaluated here in the equivalent innovation form
/// `(b − Ca)ᵀ(CACᵀ + B)⁻¹(b − Ca)`.
pub fn fuse_quadratics(
    a: &DVector<f64>,
    a_weight: &DMatrix<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    b_weight: &DMatrix<f64>,
) -> Result<QuadraticForm> {
    let n = a.len();
    let m = b.len();
    if a_weight.shape() != (n, n) {
        return Err(Error::dim(format!("A must be {n}x{n}, got {:?}", a_weight.shape())));
    }
    if c.shape() != (m, n) {
        return Err(Error::dim(format!("C must be {m}x{n}, got {:?}", c.shape())));
    }
    if b_weight.shape() != (m, m) {
        return Err(Error::dim(format!("B must be {m}x{m}, got {:?}", b_weight.shape())));
    }
    if m == 0 {
        return Ok(QuadraticForm { center: a.clone(), weight: symmetrize(a_weight), offset: 0.0 });
    }

    let ca = c * a_weight;
    let innovation_cov = symmetrize(&(&ca * c.transpose() + b_weight));
    let chol = linalg::spd_factor(&innovation_cov, "innovation covariance CACᵀ+B")?;
    // gainᵀ = S⁻¹ C A
    let gain_t = chol.solve(&ca);
    let innovation = b - c * a;
    let weight = symmetrize(&(a_weight - ca.transpose() * &gain_t));
    let center = a + gain_t.transpose() * &innovation;
    let offset = innovation.dot(&chol.solve(&innovation)).max(0.0);
    Ok(QuadraticForm { center, weight, offset })
}

/// Result of rewriting `‖Cx − a‖²_{A⁻¹}` as `‖x − center‖²_W + residual`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReduction {
    /// `CᵀA⁻¹C` (an information matrix, applied directly, not inverted).
    pub information: DMatrix<f64>,
    pub center: DVector<f64>,
    /// Constant left over when `a` is not in the range of `C`; zero for square invertible `C`.
    pub residual: f64,
}

/// Rewrite `‖Cx − a‖²_{A⁻¹}` as a norm centred on `x`.
///
/// Requires `C` to have full column rank (singular values above `1e-10·σ_max`).
pub fn reduce_norm_through_matrix(
    c: &DMatrix<f64>,
    a_weight: &DMatrix<f64>,
    a: &DVector<f64>,
) -> Result<NormReduction> {
    let (m, n) = c.shape();
    if a.len() != m || a_weight.shape() != (m, m) {
        return Err(Error::dim(format!(
            "C is {m}x{n} but a has length {} and A is {:?}",
            a.len(),
            a_weight.shape()
        )));
    }
    if n == 0 {
        return Err(Error::Rank("C has no columns".into()));
    }
    let sv = SVD::new(c.clone(), false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax).count();
    if smax == 0.0 || rank < n {
        return Err(Error::Rank(format!("C ({m}x{n}) has rank {rank}, needs full column rank {n}")));
    }
    let chol = linalg::spd_factor(a_weight, "A")?;
    let ainv_c = chol.solve(c);
    let ainv_a = chol.solve(a);
    let information = symmetrize(&(c.transpose() * &ainv_c));
    let rhs = c.transpose() * &ainv_a;
    let center = linalg::spd_solve_vec(&information, &rhs, "CᵀA⁻¹C")
        .map_err(|e| Error::Rank(format!("CᵀA⁻¹C not invertible: {e}")))?;
    let residual = (a.dot(&ainv_a) - center.dot(&(&information * &center))).max(0.0);
    Ok(NormReduction { information, center, residual })
}

fn lu_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim(format!("{what} must be square")));
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let (hi, lo) = (sv.max(), sv.min());
    if !(lo > 0.0) || hi / lo > CONDITION_LIMIT {
        return Err(Error::Numerical(format!("{what} is numerically singular")));
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

/// Right-hand side of `(A + BDC)⁻¹ = A⁻¹ − A⁻¹B(CA⁻¹B + D⁻¹)⁻¹CA⁻¹`.
pub fn woodbury_inverse(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let ai = lu_inverse(a, "A")?;
    let di = lu_inverse(d, "D")?;
    let inner = lu_inverse(&(c * &ai * b + di), "CA⁻¹B + D⁻¹")?;
    Ok(&ai - &ai * b * inner * c * &ai)
}

/// Right-hand side of `(A + BDC)⁻¹BD = A⁻¹B(D⁻¹ + CA⁻¹B)⁻¹`.
pub fn woodbury_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let ai = lu_inverse(a, "A")?;
    let di = lu_inverse(d, "D")?;
    let inner = lu_inverse(&(di + c * &ai * b), "D⁻¹ + CA⁻¹B")?;
    Ok(&ai * b * inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_spd, random_vector, rng};

    fn j1(x: &DVector<f64>, a: &DVector<f64>, aw: &DMatrix<f64>) -> f64 {
        let d = x - a;
        d.dot(&(aw.clone().try_inverse().unwrap() * &d))
    }

    fn j2(x: &DVector<f64>, c: &DMatrix<f64>, b: &DVector<f64>, bw: &DMatrix<f64>) -> f64 {
        let d = c * x - b;
        d.dot(&(bw.clone().try_inverse().unwrap() * &d))
    }

    #[test]
    fn scalar_fusion_matches_hand_expansion() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let q = fuse_quadratics(
            &DVector::from_element(1, 0.0),
            &one,
            &one,
            &DVector::from_element(1, 2.0),
            &one,
        )
        .unwrap();
        assert!((q.weight[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((q.center[0] - 1.0).abs() < 1e-15);
        assert!((q.offset - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_map_leaves_prior_untouched() {
        let mut r = rng(3);
        let aw = random_spd(&mut r, 3);
        let bw = random_spd(&mut r, 2);
        let a = random_vector(&mut r, 3);
        let b = random_vector(&mut r, 2);
        let q = fuse_quadratics(&a, &aw, &DMatrix::zeros(2, 3), &b, &bw).unwrap();
        assert!((&q.weight - &aw).amax() < 1e-14);
        assert_eq!(q.center, a);
        let expect = b.dot(&(bw.clone().try_inverse().unwrap() * &b));
        assert!((q.offset - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn fusion_is_exact_at_random_points() {
        let mut r = rng(11);
        let aw = random_spd(&mut r, 3);
        let bw = random_spd(&mut r, 2);
        let c = random_matrix(&mut r, 2, 3);
        let a = random_vector(&mut r, 3);
        let b = random_vector(&mut r, 2);
        let q = fuse_quadratics(&a, &aw, &c, &b, &bw).unwrap();
        assert!(linalg::min_eigenvalue(&q.weight) > 0.0);
        let pi = j1(&q.center, &a, &aw) + j2(&q.center, &c, &b, &bw);
        assert!((pi - q.offset).abs() < 1e-9);
        for _ in 0..20 {
            let x = random_vector(&mut r, 3) * 3.0;
            let lhs = j1(&x, &a, &aw) + j2(&x, &c, &b, &bw);
            let rhs = q.eval(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn fusion_rejects_bad_shapes() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let err = fuse_quadratics(
            &DVector::from_element(2, 0.0),
            &one,
            &one,
            &DVector::from_element(1, 0.0),
            &one,
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn fusion_flags_singular_innovation() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-20]));
        let a = DVector::zeros(2);
        let err = fuse_quadratics(&a, &w, &DMatrix::identity(2, 2), &a, &w);
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn reduction_identity_and_scalar_cases() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let red = reduce_norm_through_matrix(&eye, &eye, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!((&red.information - &eye).amax() < 1e-15);
        assert!((red.center[0] - 1.0).abs() < 1e-15 && (red.center[1] - 2.0).abs() < 1e-15);

        let red = reduce_norm_through_matrix(
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 4.0),
        )
        .unwrap();
        assert!((red.information[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((red.center[0] - 2.0).abs() < 1e-15);
        assert!(red.residual.abs() < 1e-12);
    }

    #[test]
    fn reduction_is_exact_for_tall_matrices() {
        let mut r = rng(5);
        let c = random_matrix(&mut r, 4, 2);
        let aw = random_spd(&mut r, 4);
        let a = random_vector(&mut r, 4);
        let red = reduce_norm_through_matrix(&c, &aw, &a).unwrap();
        for _ in 0..20 {
            let x = random_vector(&mut r, 2) * 2.0;
            let lhs = j2(&x, &c, &a, &aw);
            let d = &x - &red.center;
            let rhs = d.dot(&(&red.information * &d)) + red.residual;
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn reduction_rejects_rank_deficiency() {
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let err = reduce_norm_through_matrix(&c, &DMatrix::identity(3, 3), &DVector::zeros(3));
        assert!(matches!(err, Err(Error::Rank(_))));
    }

    #[test]
    fn woodbury_scalar_case() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let inv = woodbury_inverse(&s(2.0), &s(1.0), &s(1.0), &s(1.0)).unwrap();
        assert!((inv[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let gain = woodbury_gain(&s(2.0), &s(1.0), &s(1.0), &s(1.0)).unwrap();
        assert!((gain[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }
}
