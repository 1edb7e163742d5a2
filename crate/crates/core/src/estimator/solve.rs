use nalgebra::DVector;

use super::window::{ConstraintSet, EstimationWindow, Evaluation, LocalSolution, LocalWeights, WindowProblem};
use crate::error::{Error, Result};
use crate::local::LocalModel;
use crate::qp::{solve_qp, QpProblem, QpSolution};

pub const GN_MAX_ITERATIONS: usize = 30;
pub const GN_REL_DECREASE: f64 = 1e-10;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Default starting point: the prior center pushed through the window dynamics.
fn default_start(p: &WindowProblem, initial: Option<&[DVector<f64>]>) -> Result<DVector<f64>> {
    let n = p.n_states();
    let m = p.m;
    let mut z = DVector::zeros(n * m);
    if let Some(init) = initial {
        if init.len() != n || init.iter().any(|x| x.len() != m) {
            return Err(Error::dim(format!("initial guess must hold {n} states of length {m}")));
        }
        for (j, x) in init.iter().enumerate() {
            z.rows_mut(j * m, m).copy_from(x);
        }
        return Ok(z);
    }
    let mut x = match &p.window.prior {
        Some(pr) => pr.center.clone(),
        None => DVector::zeros(m),
    };
    z.rows_mut(0, m).copy_from(&x);
    for j in 0..p.window.len() {
        x = p.local.step(p.window.start + j, &x, &p.window.x_tilde[j])?.0;
        z.rows_mut((j + 1) * m, m).copy_from(&x);
    }
    Ok(z)
}

fn clamp_into(z: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for j in 0..z.len() {
        z[j] = z[j].clamp(lo[j], hi[j]);
    }
}

/// Constrained Gauss–Newton subproblem on the step `Δ`.
fn subproblem(p: &WindowProblem, c: &ConstraintSet, z: &DVector<f64>, ev: &Evaluation) -> Result<QpSolution> {
    let jt = ev.jacobian.transpose();
    let h = &jt * &ev.jacobian * 2.0;
    let g = &jt * &ev.residual * 2.0;
    let mut qp = QpProblem::unconstrained(h, g);
    let (lo, hi) = p.state_bounds(c);
    qp.lower = &lo - z;
    qp.upper = &hi - z;
    let (rows, rl, ru) = p.w_rows(c, ev);
    qp.rows = rows;
    qp.row_lower = rl;
    qp.row_upper = ru;
    solve_qp(&qp)
}

fn package(p: &WindowProblem, z: &DVector<f64>, ev: Evaluation, kkt: f64, iterations: usize) -> LocalSolution {
    LocalSolution {
        start: p.window.start,
        x: p.split(z),
        objective: ev.objective(),
        w: ev.w,
        v_direct: ev.v_direct,
        v: ev.v,
        kkt_residual: kkt,
        iterations,
        converged: true,
    }
}

/// Linear local MHE: the residuals are affine, so one constrained step from any point is exact.
pub fn solve_local_mhe_linear(
    window: &EstimationWindow,
    local: &dyn LocalModel,
    weights: &LocalWeights,
    constraints: &ConstraintSet,
) -> Result<LocalSolution> {
    if !local.is_linear() {
        return Err(Error::Model("linear solve requested for a nonlinear model".into()));
    }
    let p = WindowProblem::new(window, local, weights)?;
    constraints.validate(p.m)?;
    let (lo, hi) = p.state_bounds(constraints);
    let mut z = default_start(&p, None)?;
    clamp_into(&mut z, &lo, &hi);
    let ev = p.evaluate(&z)?;
    let sol = subproblem(&p, constraints, &z, &ev)?;
    z += &sol.x;
    clamp_into(&mut z, &lo, &hi);
    let ev = p.evaluate(&z)?;
    Ok(package(&p, &z, ev, sol.kkt_residual, sol.iterations))
}

/// Nonlinear local MHE by constrained Gauss–Newton with an Armijo backtracking search.
///
/// `initial` is the starting window (warm start); by default the prior center is propagated.
pub fn solve_local_mhe_nonlinear(
    window: &EstimationWindow,
    local: &dyn LocalModel,
    weights: &LocalWeights,
    constraints: &ConstraintSet,
    initial: Option<&[DVector<f64>]>,
) -> Result<LocalSolution> {
    solve_gauss_newton(window, local, weights, constraints, initial).map(|(s, _)| s)
}

/// Gauss–Newton returning the objective after every outer iteration as well.
pub fn solve_gauss_newton(
    window: &EstimationWindow,
    local: &dyn LocalModel,
    weights: &LocalWeights,
    constraints: &ConstraintSet,
    initial: Option<&[DVector<f64>]>,
) -> Result<(LocalSolution, Vec<f64>)> {
    let (sol, history) = gauss_newton_best_effort(window, local, weights, constraints, initial)?;
    if sol.converged {
        return Ok((sol, history));
    }
    let z: Vec<f64> = sol.x.iter().flat_map(|v| v.iter().copied()).collect();
    Err(Error::NonConvergence {
        iterations: GN_MAX_ITERATIONS,
        context: format!("Gauss–Newton stopped with objective {:.6e} at best iterate {z:?}", sol.objective),
    })
}

/// As [`solve_gauss_newton`], but at the iteration cap the best iterate is returned
/// with `converged = false` instead of an error.
pub fn gauss_newton_best_effort(
    window: &EstimationWindow,
    local: &dyn LocalModel,
    weights: &LocalWeights,
    constraints: &ConstraintSet,
    initial: Option<&[DVector<f64>]>,
) -> Result<(LocalSolution, Vec<f64>)> {
    let p = WindowProblem::new(window, local, weights)?;
    constraints.validate(p.m)?;
    let (lo, hi) = p.state_bounds(constraints);
    let mut z = default_start(&p, initial)?;
    clamp_into(&mut z, &lo, &hi);
    let mut ev = p.evaluate(&z)?;
    let mut phi = ev.objective();
    let mut history = vec![phi];
    let mut kkt = f64::NAN;
    for it in 0..GN_MAX_ITERATIONS {
        let sol = subproblem(&p, constraints, &z, &ev)?;
        kkt = sol.kkt_residual;
        let step = sol.x;
        let slope = 2.0 * ev.residual.dot(&(&ev.jacobian * &step));
        let predicted = phi - (&ev.residual + &ev.jacobian * &step).norm_squared();
        if slope >= 0.0 || predicted <= GN_REL_DECREASE * phi.max(f64::MIN_POSITIVE) {
            return Ok((package(&p, &z, ev, kkt, it), history));
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = &z + &step * alpha;
            clamp_into(&mut trial, &lo, &hi);
            // evaluation failures inside the search shrink the step
            if let Ok(tev) = p.evaluate(&trial) {
                let tphi = tev.objective();
                if tphi <= phi + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, tev, tphi));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((nz, nev, nphi)) = accepted else {
            return Ok((package(&p, &z, ev, kkt, it), history));
        };
        let decrease = phi - nphi;
        z = nz;
        ev = nev;
        phi = nphi;
        history.push(phi);
        if decrease <= GN_REL_DECREASE * history[history.len() - 2].max(f64::MIN_POSITIVE) {
            return Ok((package(&p, &z, ev, kkt, it + 1), history));
        }
    }
    let mut out = package(&p, &z, ev, kkt, GN_MAX_ITERATIONS);
    out.converged = false;
    Ok((out, history))
}
