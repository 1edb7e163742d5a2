use dmhe::fusion::{fuse_quadratics, woodbury_inverse};
use dmhe::harness::compute_rmse;
use dmhe::plant::ScalingMap;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0..5.0f64, n).prop_map(DVector::from_vec)
}

fn matrix(m: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, m * n).prop_map(move |v| DMatrix::from_vec(m, n, v))
}

/// `M Mᵀ + δ I` stays comfortably positive definite.
fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(n, n), 0.2..2.0f64).prop_map(move |(m, d)| &m * m.transpose() + DMatrix::identity(n, n) * d)
}

fn inv_sq(d: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    d.dot(&(w.clone().try_inverse().unwrap() * d))
}

proptest! {
    #[test]
    fn scaling_round_trips(x in vector(6), f in prop::collection::vec(0.01..1e3f64, 6)) {
        let s = ScalingMap::new(DVector::from_vec(f)).unwrap();
        let back = s.invert(&s.apply(&x));
        prop_assert!((back - &x).amax() <= 1e-12 * x.amax().max(1.0));
    }

    #[test]
    fn fused_quadratic_equals_the_sum(
        (a, aw, c, b, bw, x) in (1usize..4, 1usize..4).prop_flat_map(|(n, m)| (vector(n), spd(n), matrix(m, n), vector(m), spd(m), vector(n)))
    ) {
        let f = fuse_quadratics(&a, &aw, &c, &b, &bw).unwrap();
        let lhs = inv_sq(&(&x - &a), &aw) + inv_sq(&(&c * &x - &b), &bw);
        prop_assert!((lhs - f.eval(&x).unwrap()).abs() <= 1e-8 * lhs.max(1.0));
        prop_assert!(f.eval(&f.center).unwrap() <= lhs + 1e-9);
    }

    #[test]
    fn woodbury_matches_direct_inverse(
        (a, bm, cm, d) in (1usize..4, 1usize..4).prop_flat_map(|(n, m)| (spd(n), matrix(n, m), matrix(m, n), spd(m)))
    ) {
        let direct = (&a + &bm * &d * &cm).try_inverse();
        prop_assume!(direct.as_ref().is_some_and(|m| m.amax() < 1e4));
        let got = woodbury_inverse(&a, &bm, &cm, &d).unwrap();
        prop_assert!((got - direct.unwrap()).amax() < 1e-6);
    }

    #[test]
    fn rmse_is_nonnegative_and_zero_on_truth(t in prop::collection::vec(vector(3), 1..8), shift in -1.0..1.0f64) {
        let s = ScalingMap::unit(3);
        prop_assert_eq!(compute_rmse(&t, &t, &s).unwrap(), 0.0);
        let e: Vec<_> = t.iter().map(|x| x.add_scalar(shift)).collect();
        let r = compute_rmse(&t, &e, &s).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!((r - shift.abs()).abs() < 1e-12);
    }
}
