//! Recursive arrival cost.
//!
//! Two chains run per subsystem. The internal chain alternates a measurement
//! update `(P̆, x̆) → (P̌, x̌)` with a time update `(P̌, x̌) → (P̆, x̆)`. The
//! read-out propagates `P̆` directly, `P = Q + A P̆ Aᵀ`, and gives the weight and
//! center of the arrival cost `‖x − x̄‖²_{P⁻¹}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fusion::fuse_quadratics;
use crate::linalg::{check_covariance, min_eigenvalue, symmetrize};
use crate::local::LocalModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalCostState {
    pub i: usize,
    /// Instant that `p_breve`/`x_breve` refer to.
    pub k: usize,
    pub p_breve: DMatrix<f64>,
    pub x_breve: DVector<f64>,
    pub p_check: Option<DMatrix<f64>>,
    pub x_check: Option<DVector<f64>>,
    /// Read-out for instant `k + 1` once [`arrival_readout`] has run.
    pub p_bar: Option<DMatrix<f64>>,
    pub x_bar: Option<DVector<f64>>,
    /// Constant dropped by the output fusions so far; the cost to arrive at `x̆` is
    /// `‖x − x̆‖²_{P̆⁻¹} + offset` (exact for linear subsystems).
    pub offset: f64,
}

/// One diagnostic row: `(k, i, eigmin(P), trace(P), ‖x̄‖)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalTrace {
    pub k: usize,
    pub i: usize,
    pub eigmin: f64,
    pub trace: f64,
    pub center_norm: f64,
}

/// Absorb `‖y − ŷ − G(x − x₀)‖²_{R⁻¹}` into `‖x − x₀‖²_{P⁻¹}`.
///
/// Returns the fused weight, center and the constant left over.
pub fn measurement_update(
    p: &DMatrix<f64>,
    x0: &DVector<f64>,
    sensitivity: &DMatrix<f64>,
    innovation: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let b = innovation + sensitivity * x0;
    let q = fuse_quadratics(x0, p, sensitivity, &b, r)?;
    Ok((q.weight, q.center, q.offset))
}

fn propagate(f: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(q + f * p * f.transpose()))
}

fn guard(i: usize, k: usize, m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_covariance(m, &format!("{what} of subsystem {i} at instant {k}"))
}

/// Fuse the prior `(x̄₀, P₀)` with the direct measurement `y₀` (neighbors at `x̃₀`).
pub fn init_arrival(
    local: &dyn LocalModel,
    p0: &DMatrix<f64>,
    x_bar0: &DVector<f64>,
    y0: &DVector<f64>,
    x_tilde0: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<ArrivalCostState> {
    let i = local.subsystem();
    if p0.nrows() != local.own_dim() || x_bar0.len() != local.own_dim() {
        return Err(Error::dim(format!("prior of subsystem {i} does not match its state dimension")));
    }
    if y0.len() != local.output_dim() {
        return Err(Error::dim(format!("y0 has length {}, expected {}", y0.len(), local.output_dim())));
    }
    let (yhat, g) = local.direct_output(x_bar0, x_tilde0)?;
    let (p, x, offset) = measurement_update(p0, x_bar0, &g, &(y0 - yhat), r)?;
    guard(i, 0, &p, "P̆")?;
    Ok(ArrivalCostState {
        i,
        k: 0,
        p_breve: p,
        x_breve: x,
        p_check: None,
        x_check: None,
        p_bar: None,
        x_bar: None,
        offset,
    })
}

/// Measurement update with `y_{k+1}` predicted from instant `k`.
///
/// `lin_point` chooses where the sensitivity is evaluated (the chain mean when `None`).
pub fn output_update(
    s: &ArrivalCostState,
    local: &dyn LocalModel,
    y_next: &DVector<f64>,
    x_tilde: &DVector<f64>,
    r: &DMatrix<f64>,
    lin_point: Option<&DVector<f64>>,
) -> Result<ArrivalCostState> {
    if y_next.len() != local.output_dim() {
        return Err(Error::dim(format!("y has length {}, expected {}", y_next.len(), local.output_dim())));
    }
    let (yhat, mut g) = local.predicted_output(s.k, &s.x_breve, x_tilde)?;
    if let (Some(xl), false) = (lin_point, local.is_linear()) {
        g = local.predicted_output(s.k, xl, x_tilde)?.1;
    }
    let (p, x, pi) = measurement_update(&s.p_breve, &s.x_breve, &g, &(y_next - yhat), r)?;
    guard(s.i, s.k, &p, "P̌")?;
    Ok(ArrivalCostState { p_check: Some(p), x_check: Some(x), offset: s.offset + pi, ..s.clone() })
}

/// `P̆_{k+1} = Q + A P̌ Aᵀ`, `x̆_{k+1} = f_i(x̌, X̃_k)`.
pub fn time_update(
    s: &ArrivalCostState,
    local: &dyn LocalModel,
    x_tilde: &DVector<f64>,
    q: &DMatrix<f64>,
    lin_point: Option<&DVector<f64>>,
) -> Result<ArrivalCostState> {
    let (p_check, x_check) = match (&s.p_check, &s.x_check) {
        (Some(p), Some(x)) => (p, x),
        _ => return Err(Error::Numerical("time update requested before the output update".into())),
    };
    let (x_next, mut f) = local.step(s.k, x_check, x_tilde)?;
    if let (Some(xl), false) = (lin_point, local.is_linear()) {
        f = local.step(s.k, xl, x_tilde)?.1;
    }
    let p = propagate(&f, p_check, q);
    guard(s.i, s.k + 1, &p, "P̆")?;
    Ok(ArrivalCostState {
        i: s.i,
        k: s.k + 1,
        p_breve: p,
        x_breve: x_next,
        p_check: None,
        x_check: None,
        p_bar: None,
        x_bar: None,
        offset: s.offset,
    })
}

/// `P_{k+1} = Q + A P̆_k Aᵀ`, `x̄_{k+1} = f_i(x̆_k, X̃_k)`.
pub fn arrival_readout(
    s: &ArrivalCostState,
    local: &dyn LocalModel,
    x_tilde: &DVector<f64>,
    q: &DMatrix<f64>,
    lin_point: Option<&DVector<f64>>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (x_bar, mut f) = local.step(s.k, &s.x_breve, x_tilde)?;
    if let (Some(xl), false) = (lin_point, local.is_linear()) {
        f = local.step(s.k, xl, x_tilde)?.1;
    }
    let p = propagate(&f, &s.p_breve, q);
    guard(s.i, s.k + 1, &p, "P")?;
    Ok((p, x_bar))
}

/// Read-out, output update and time update for one instant.
///
/// Returns the state for instant `k + 1` with `p_bar`/`x_bar` filled by the read-out.
pub fn advance(
    s: &ArrivalCostState,
    local: &dyn LocalModel,
    y_next: &DVector<f64>,
    x_tilde: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    lin_point: Option<&DVector<f64>>,
) -> Result<ArrivalCostState> {
    let (p_bar, x_bar) = arrival_readout(s, local, x_tilde, q, lin_point)?;
    let checked = output_update(s, local, y_next, x_tilde, r, lin_point)?;
    let mut next = time_update(&checked, local, x_tilde, q, lin_point)?;
    next.p_bar = Some(p_bar);
    next.x_bar = Some(x_bar);
    Ok(next)
}

/// [`advance`] with every Jacobian evaluated at the current own estimate `x_hat`.
pub fn update_for_nonlinear(
    s: &ArrivalCostState,
    local: &dyn LocalModel,
    y_next: &DVector<f64>,
    x_tilde: &DVector<f64>,
    x_hat: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<ArrivalCostState> {
    advance(s, local, y_next, x_tilde, q, r, Some(x_hat))
}

impl ArrivalCostState {
    pub fn trace(&self) -> Option<ArrivalTrace> {
        let (p, x) = (self.p_bar.as_ref()?, self.x_bar.as_ref()?);
        Some(ArrivalTrace {
            k: self.k,
            i: self.i,
            eigmin: min_eigenvalue(p),
            trace: p.trace(),
            center_norm: x.norm(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::LinearLocal;
    use crate::model::PartitionedLinearModel;
    use crate::testutil::{random_matrix, random_spd, rng};

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar(a: f64, c: f64, q: f64) -> PartitionedLinearModel {
        PartitionedLinearModel::new(
            vec![1],
            vec![1],
            vec![vec![s(a)]],
            vec![s(c)],
            vec![s(q)],
            vec![s(1.0)],
            vec![s(1.0)],
        )
        .unwrap()
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn scalar_chain_values() {
        let m = scalar(1.0, 1.0, 1.0);
        let sel = m.selectors();
        let loc = LinearLocal::new(&m, &sel, 0);
        let st = init_arrival(&loc, m.p0(0), &v(0.0), &v(0.3), &v(0.0), m.r()).unwrap();
        assert!((st.p_breve[(0, 0)] - 0.5).abs() < 1e-12);
        let (p1, _) = arrival_readout(&st, &loc, &v(0.0), m.q(0), None).unwrap();
        assert!((p1[(0, 0)] - 1.5).abs() < 1e-12);
        let ck = output_update(&st, &loc, &v(0.0), &v(0.0), m.r(), None).unwrap();
        assert!((ck.p_check.as_ref().unwrap()[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        let st1 = time_update(&ck, &loc, &v(0.0), m.q(0), None).unwrap();
        assert_eq!(st1.k, 1);
        assert!((st1.p_breve[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        let (p2, _) = arrival_readout(&st1, &loc, &v(0.0), m.q(0), None).unwrap();
        assert!((p2[(0, 0)] - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unobserved_subsystem_keeps_prior() {
        let m = scalar(1.0, 0.0, 1.0);
        let sel = m.selectors();
        let loc = LinearLocal::new(&m, &sel, 0);
        let st = init_arrival(&loc, m.p0(0), &v(2.0), &v(5.0), &v(0.0), m.r()).unwrap();
        assert_eq!(st.p_breve[(0, 0)], 1.0);
        assert_eq!(st.x_breve[0], 2.0);
        let ck = output_update(&st, &loc, &v(9.0), &v(0.0), m.r(), None).unwrap();
        assert_eq!(ck.p_check, Some(st.p_breve.clone()));
        assert_eq!(ck.x_check, Some(st.x_breve.clone()));
    }

    #[test]
    fn memoryless_and_pure_carry_over() {
        let m = PartitionedLinearModel::new(
            vec![1, 1],
            vec![1, 1],
            vec![vec![s(0.0), s(0.5)], vec![s(0.0), s(1.0)]],
            vec![s(1.0), s(1.0)],
            vec![s(0.2), s(1.0)],
            vec![s(1.0), s(1.0)],
            vec![s(1.0), s(1.0)],
        )
        .unwrap();
        let sel = m.selectors();
        let loc = LinearLocal::new(&m, &sel, 0);
        let xt = DVector::from_vec(vec![0.0, 4.0]);
        let st = init_arrival(&loc, m.p0(0), &v(1.0), &DVector::from_vec(vec![1.0, 4.0]), &xt, m.r()).unwrap();
        let ck = output_update(&st, &loc, &DVector::from_vec(vec![2.0, 4.0]), &xt, m.r(), None).unwrap();
        let st1 = time_update(&ck, &loc, &xt, m.q(0), None).unwrap();
        assert!((st1.p_breve[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((st1.x_breve[0] - 2.0).abs() < 1e-15);

        // A_ii = I, Q → 0 gives P_{k+1} = P̆_k; Q must stay SPD so use a tiny one
        let m = scalar(1.0, 1.0, 1e-13);
        let sel = m.selectors();
        let loc = LinearLocal::new(&m, &sel, 0);
        let st = init_arrival(&loc, m.p0(0), &v(0.0), &v(1.0), &v(0.0), m.r()).unwrap();
        let (p, _) = arrival_readout(&st, &loc, &v(0.0), m.q(0), None).unwrap();
        assert!((p[(0, 0)] - st.p_breve[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn matches_information_form_recursion() {
        let mut r = rng(21);
        let a = random_matrix(&mut r, 2, 2) * 0.9;
        let q = random_spd(&mut r, 2) * 0.1;
        let rr = random_spd(&mut r, 2);
        let p0 = random_spd(&mut r, 2);
        let c = random_matrix(&mut r, 2, 2);
        let m = PartitionedLinearModel::new(
            vec![2],
            vec![2],
            vec![vec![a.clone()]],
            vec![c.clone()],
            vec![q.clone()],
            vec![rr.clone()],
            vec![p0.clone()],
        )
        .unwrap();
        let sel = m.selectors();
        let loc = LinearLocal::new(&m, &sel, 0);
        let xt = DVector::zeros(2);
        let y = DVector::zeros(2);

        let inv = |m: &DMatrix<f64>| m.clone().try_inverse().unwrap();
        let ri = inv(&rr);
        let ca = &c * &a;
        let mut info_breve = inv(&p0) + c.transpose() * &ri * &c;

        let mut st = init_arrival(&loc, &p0, &xt, &y, &xt, m.r()).unwrap();
        for _ in 0..20 {
            let p_breve = inv(&info_breve);
            let expect_p = &q + &a * &p_breve * a.transpose();
            st = advance(&st, &loc, &y, &xt, &q, &rr, None).unwrap();
            let got = st.p_bar.as_ref().unwrap();
            assert!((got - &expect_p).amax() < 1e-10 * expect_p.amax().max(1.0));
            let p_check = inv(&(info_breve.clone() + ca.transpose() * &ri * &ca));
            info_breve = inv(&(&q + &a * &p_check * a.transpose()));
        }
    }

    #[test]
    fn measurement_updates_never_add_covariance() {
        let mut r = rng(4);
        let m = PartitionedLinearModel::new(
            vec![3],
            vec![2],
            vec![vec![random_matrix(&mut r, 3, 3)]],
            vec![random_matrix(&mut r, 2, 3)],
            vec![random_spd(&mut r, 3)],
            vec![random_spd(&mut r, 2)],
            vec![random_spd(&mut r, 3)],
        )
        .unwrap();
        let sel = m.selectors();
        let loc = LinearLocal::new(&m, &sel, 0);
        let z3 = DVector::zeros(3);
        let mut st = init_arrival(&loc, m.p0(0), &z3, &DVector::zeros(2), &z3, m.r()).unwrap();
        for _ in 0..30 {
            let ck = output_update(&st, &loc, &DVector::zeros(2), &z3, m.r(), None).unwrap();
            let diff = &st.p_breve - ck.p_check.as_ref().unwrap();
            assert!(min_eigenvalue(&diff) > -1e-10 * st.p_breve.amax());
            st = time_update(&ck, &loc, &z3, m.q(0), None).unwrap();
            assert!(min_eigenvalue(&st.p_breve) > 0.0);
        }
    }
}
