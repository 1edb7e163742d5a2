mod common;

use common::*;
use dmhe::coordinator::{Coordinator, EstimatorSetup, Variant, VariantConfig};
use dmhe::estimator::{fie_normal_equations, schur_last_block, solve_fie_oracle, FieMode};
use dmhe::fusion::fuse_quadratics;
use nalgebra::DVector;

#[test]
fn windowed_recursive_arrival_matches_distributed_fie() {
    let mut r = rng(2024);
    let model = random_model(&mut r, &[2, 2], &[1, 1], 0.95);
    let x_bar0 = vec(&mut r, 4);
    let steps = 60;
    let ys: Vec<DVector<f64>> = (0..steps).map(|_| vec(&mut r, 2)).collect();
    let mut xt: Vec<DVector<f64>> = (0..steps).map(|_| vec(&mut r, 4)).collect();
    xt[0] = x_bar0.clone();

    let setup = EstimatorSetup::linear(model.clone(), x_bar0.clone());
    let mut mhe = Coordinator::new(setup.clone(), VariantConfig::new(Variant::Proposed, 3))
        .unwrap()
        .with_injected_neighbors(xt.clone());
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        mhe.advance_one_instant(ys[k].clone()).unwrap();
        for i in 0..2 {
            let fie = solve_fie_oracle(&model, &ys[..=k], &x_bar0, FieMode::Distributed(i), &xt[..k.max(1)]).unwrap();
            let sol = &mhe.last_solutions[i];
            for (off, x) in sol.x.iter().enumerate() {
                worst = worst.max((x - &fie[sol.start + off]).amax());
            }
        }
    }
    assert!(worst < 1e-6, "max window difference {worst:e}");
}

#[test]
fn fie_oracle_variant_matches_windowed_run() {
    let mut r = rng(7);
    let model = random_model(&mut r, &[2, 2], &[1, 1], 0.9);
    let x_bar0 = vec(&mut r, 4);
    let ys: Vec<DVector<f64>> = (0..40).map(|_| vec(&mut r, 2)).collect();
    let setup = EstimatorSetup::linear(model, x_bar0);
    let mut a = Coordinator::new(setup.clone(), VariantConfig::new(Variant::Proposed, 3)).unwrap();
    let mut b = Coordinator::new(setup, VariantConfig::new(Variant::FieOracle, 3)).unwrap();
    for y in &ys {
        let xa = a.advance_one_instant(y.clone()).unwrap();
        let xb = b.advance_one_instant(y.clone()).unwrap();
        assert!((xa - xb).amax() < 1e-6);
    }
    // window optimum plus the dropped arrival constant is the full-information optimum
    for (fa, fb) in a.ledger.collective.iter().zip(&b.ledger.collective) {
        assert!((fa - fb).abs() < 1e-8 * (1.0 + fb.abs()), "{fa} vs {fb}");
    }
}

#[test]
fn one_instant_is_the_fused_prior() {
    let mut r = rng(3);
    let model = random_model(&mut r, &[2, 1], &[1, 1], 0.8);
    let x_bar0 = vec(&mut r, 3);
    let y0 = vec(&mut r, 2);
    let (_, c) = model.assemble_global();
    let p0 = dmhe::linalg::block_diag(model.p0_blocks());
    let fused = fuse_quadratics(&x_bar0, &p0, &c, &y0, model.r()).unwrap();
    let cen = solve_fie_oracle(&model, &[y0.clone()], &x_bar0, FieMode::Centralized, &[]).unwrap();
    assert!((&cen[0] - &fused.center).amax() < 1e-10);

    // the windowed estimator at k = 0 is the per-subsystem fusion with neighbors at x̄_0
    let mut co = Coordinator::new(EstimatorSetup::linear(model.clone(), x_bar0.clone()), VariantConfig::new(Variant::Proposed, 2)).unwrap();
    let est = co.advance_one_instant(y0.clone()).unwrap();
    let sel = model.selectors();
    for i in 0..2 {
        let rg = model.partition().state_range(i);
        let xi = x_bar0.rows_range(rg.clone()).into_owned();
        let b = &y0 - &sel.c_tilde[i] * &x_bar0;
        let f = fuse_quadratics(&xi, model.p0(i), &sel.c_star[i], &b, model.r()).unwrap();
        assert!((est.rows_range(rg).into_owned() - f.center).amax() < 1e-10);
    }
}

#[test]
fn noise_free_data_and_exact_prior_are_recovered() {
    let mut r = rng(12);
    let model = random_model(&mut r, &[2, 2], &[1, 1], 0.9);
    let (a, c) = model.assemble_global();
    let mut x = vec(&mut r, 4);
    let x0 = x.clone();
    let mut xs = vec![];
    let mut ys = vec![];
    for _ in 0..15 {
        xs.push(x.clone());
        ys.push(&c * &x);
        x = &a * &x;
    }
    let cen = solve_fie_oracle(&model, &ys, &x0, FieMode::Centralized, &[]).unwrap();
    for (e, t) in cen.iter().zip(&xs) {
        assert!((e - t).amax() < 1e-9);
    }
    for i in 0..2 {
        let rg = model.partition().state_range(i);
        let dis = solve_fie_oracle(&model, &ys, &x0, FieMode::Distributed(i), &xs[..14]).unwrap();
        for (e, t) in dis.iter().zip(&xs) {
            assert!((e - t.rows_range(rg.clone())).amax() < 1e-9);
        }
    }
}

/// The chain covariances equal the inverse marginal information of the dense problem.
#[test]
fn chain_matches_dense_schur_complements() {
    let mut r = rng(31);
    let model = random_model(&mut r, &[1, 1], &[1, 1], 0.9);
    let x_bar0 = vec(&mut r, 2);
    let steps = 8;
    let ys: Vec<DVector<f64>> = (0..steps).map(|_| vec(&mut r, 2)).collect();
    let mut xt: Vec<DVector<f64>> = (0..steps).map(|_| vec(&mut r, 2)).collect();
    xt[0] = x_bar0.clone();
    let mut co = Coordinator::new(EstimatorSetup::linear(model.clone(), x_bar0.clone()), VariantConfig::new(Variant::Proposed, 1))
        .unwrap()
        .with_injected_neighbors(xt.clone());
    for k in 0..steps {
        co.advance_one_instant(ys[k].clone()).unwrap();
        if k < 2 {
            continue;
        }
        // with N = 1 the chain sits at instant k − 1 and carries y_0..y_{k−1}
        let j = k - 1;
        for i in 0..2 {
            let chain = co.chains()[i].as_ref().unwrap();
            assert_eq!(chain.k, j);
            let (h, _) = fie_normal_equations(&model, &ys[..=j], &x_bar0, FieMode::Distributed(i), &xt[..j.max(1)], true).unwrap();
            let info = schur_last_block(&h, 1).unwrap();
            let expect = info.try_inverse().unwrap();
            assert!((&chain.p_breve - &expect).amax() < 1e-8 * expect.amax());
            // read-out P_j: states 0..j, measurements through y_{j−1}
            let (h, _) = fie_normal_equations(&model, &ys[..=j], &x_bar0, FieMode::Distributed(i), &xt[..j.max(1)], false).unwrap();
            let p_read = schur_last_block(&h, 1).unwrap().try_inverse().unwrap();
            assert!((chain.p_bar.as_ref().unwrap() - &p_read).amax() < 1e-8 * p_read.amax());
        }
    }
}
