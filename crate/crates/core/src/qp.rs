//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! `min ½zᵀHz + gᵀz` subject to `lower ≤ z ≤ upper` and `row_lower ≤ Gz ≤ row_upper`.
//! Infinite bounds are skipped and equal bounds become equalities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};

pub const DEFAULT_MAX_CHANGES: usize = 200;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub row_lower: DVector<f64>,
    pub row_upper: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            rows: DMatrix::zeros(0, n),
            row_lower: DVector::zeros(0),
            row_upper: DVector::zeros(0),
        }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Number of active-set additions and removals.
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active_constraints: usize,
}

#[derive(Debug, Clone)]
struct Constraint {
    normal: DVector<f64>,
    rhs: f64,
    equality: bool,
    /// `(index, bound)` for simple bounds, used to snap the final iterate.
    bound: Option<(usize, f64)>,
}

fn collect(p: &QpProblem) -> Result<Vec<Constraint>> {
    let n = p.g.len();
    let mut out = Vec::new();
    let mut push = |normal: DVector<f64>, lo: f64, hi: f64, var: Option<usize>, what: String| -> Result<()> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Infeasible(format!("{what}: lower {lo} exceeds upper {hi}")));
        }
        if lo == hi {
            if !lo.is_finite() {
                return Err(Error::Infeasible(format!("{what}: bounds pinned at infinity")));
            }
            out.push(Constraint { normal, rhs: lo, equality: true, bound: var.map(|j| (j, lo)) });
            return Ok(());
        }
        if lo.is_finite() {
            out.push(Constraint { normal: normal.clone(), rhs: lo, equality: false, bound: var.map(|j| (j, lo)) });
        }
        if hi.is_finite() {
            out.push(Constraint { normal: -normal, rhs: -hi, equality: false, bound: var.map(|j| (j, hi)) });
        }
        Ok(())
    };
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        push(e, p.lower[j], p.upper[j], Some(j), format!("bound on variable {j}"))?;
    }
    for r in 0..p.rows.nrows() {
        let normal = p.rows.row(r).transpose();
        push(normal, p.row_lower[r], p.row_upper[r], None, format!("row constraint {r}"))?;
    }
    Ok(out)
}

struct ActiveSet<'a> {
    chol: &'a Cholesky<f64, Dyn>,
    idx: Vec<usize>,
    /// Oriented normals and right-hand sides (equalities may be flipped).
    normals: Vec<DVector<f64>>,
    rhs: Vec<f64>,
    equality: Vec<bool>,
    u: Vec<f64>,
}

impl ActiveSet<'_> {
    /// Primal direction `z = H⁻¹(I − N N*)n` and dual direction `r = N* n`.
    /// Also returns `nᵀH⁻¹n`, the curvature scale for deciding whether `z` vanishes.
    fn directions(&self, np: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let hinv_np = self.chol.solve(np);
        let base = hinv_np.dot(np);
        let q = self.normals.len();
        if q == 0 {
            return Ok((hinv_np, DVector::zeros(0), base));
        }
        let n_mat = DMatrix::from_columns(&self.normals);
        let hinv_n = self.chol.solve(&n_mat);
        let m = n_mat.transpose() * &hinv_n;
        let rhs = n_mat.transpose() * &hinv_np;
        let r = m
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("active constraint normals became dependent".into()))?;
        let z = hinv_np - hinv_n * &r;
        Ok((z, r, base))
    }

    fn drop(&mut self, pos: usize) {
        self.idx.remove(pos);
        self.normals.remove(pos);
        self.rhs.remove(pos);
        self.equality.remove(pos);
        self.u.remove(pos);
    }
}

/// Solve with the default cap of active-set changes.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_qp_capped(p, DEFAULT_MAX_CHANGES)
}

pub fn solve_qp_capped(p: &QpProblem, max_changes: usize) -> Result<QpSolution> {
    let n = p.g.len();
    if p.h.shape() != (n, n)
        || p.lower.len() != n
        || p.upper.len() != n
        || p.rows.ncols() != n
        || p.row_lower.len() != p.rows.nrows()
        || p.row_upper.len() != p.rows.nrows()
    {
        return Err(Error::dim("QP data are not conformable"));
    }
    let h = symmetrize(&p.h);
    let chol = linalg::spd_factor(&h, "QP Hessian")?;
    let cons = collect(p)?;
    let scale = |c: &Constraint, x: &DVector<f64>| 1e-11 * (1.0 + c.rhs.abs() + c.normal.amax() * x.amax());

    let mut x = -chol.solve(&p.g);
    let mut act = ActiveSet { chol: &chol, idx: vec![], normals: vec![], rhs: vec![], equality: vec![], u: vec![] };
    let mut changes = 0usize;

    // equalities first, then the most violated inequality each round
    let order_eq: Vec<usize> = (0..cons.len()).filter(|&c| cons[c].equality).collect();
    let mut pending_eq = order_eq.into_iter();
    loop {
        let pick = match pending_eq.next() {
            Some(c) => Some(c),
            None => {
                let mut worst: Option<(usize, f64)> = None;
                for (c, con) in cons.iter().enumerate() {
                    if con.equality || act.idx.contains(&c) {
                        continue;
                    }
                    let s = con.normal.dot(&x) - con.rhs;
                    if s < -scale(con, &x) && worst.is_none_or(|(_, w)| s < w) {
                        worst = Some((c, s));
                    }
                }
                worst.map(|(c, _)| c)
            }
        };
        let Some(pc) = pick else { break };
        let con = &cons[pc];
        let (mut np, mut bp) = (con.normal.clone(), con.rhs);
        if con.equality && np.dot(&x) - bp > 0.0 {
            np = -np;
            bp = -bp;
        }
        let mut up = 0.0;
        loop {
            if changes >= max_changes {
                return Err(Error::NonConvergence {
                    iterations: changes,
                    context: format!("active-set cap reached; best iterate {:?}", x.as_slice()),
                });
            }
            let (z, r, base) = act.directions(&np)?;
            let sp = np.dot(&x) - bp;
            let curv = z.dot(&np);
            let full = if curv > 1e-12 * base {
                Some(-sp / curv)
            } else {
                None
            };
            let mut partial: Option<(usize, f64)> = None;
            for (j, &rj) in r.iter().enumerate() {
                if act.equality[j] || rj <= 0.0 {
                    continue;
                }
                let t = act.u[j] / rj;
                if partial.is_none_or(|(_, b)| t < b) {
                    partial = Some((j, t));
                }
            }
            match (full, partial) {
                (None, None) => {
                    if con.equality && sp.abs() <= scale(con, &x) {
                        // redundant equality
                        break;
                    }
                    return Err(Error::Infeasible(format!(
                        "constraint {pc} cannot be satisfied together with the active set"
                    )));
                }
                (None, Some((j, t))) => {
                    for (uj, rj) in act.u.iter_mut().zip(r.iter()) {
                        *uj -= t * rj;
                    }
                    up += t;
                    act.drop(j);
                    changes += 1;
                }
                (Some(t2), part) => {
                    let (t, drop) = match part {
                        Some((j, t1)) if t1 < t2 => (t1, Some(j)),
                        _ => (t2, None),
                    };
                    x += &z * t;
                    for (uj, rj) in act.u.iter_mut().zip(r.iter()) {
                        *uj -= t * rj;
                    }
                    up += t;
                    changes += 1;
                    match drop {
                        Some(j) => act.drop(j),
                        None => {
                            act.idx.push(pc);
                            act.normals.push(np.clone());
                            act.rhs.push(bp);
                            act.equality.push(con.equality);
                            act.u.push(up);
                            break;
                        }
                    }
                }
            }
        }
    }

    // polish on the final active set
    let q = act.normals.len();
    if q > 0 {
        let n_mat = DMatrix::from_columns(&act.normals);
        let hinv_n = chol.solve(&n_mat);
        let hinv_g = chol.solve(&p.g);
        let m = n_mat.transpose() * &hinv_n;
        let rhs = DVector::from_vec(act.rhs.clone()) + n_mat.transpose() * &hinv_g;
        if let Some(u) = m.lu().solve(&rhs) {
            x = &hinv_n * &u - hinv_g;
            act.u = u.iter().copied().collect();
        }
    }
    for &c in &act.idx {
        if let Some((j, b)) = cons[c].bound {
            x[j] = b;
        }
    }
    for j in 0..n {
        x[j] = x[j].clamp(p.lower[j], p.upper[j]);
    }

    let mut grad = &h * &x + &p.g;
    for (nrm, &u) in act.normals.iter().zip(&act.u) {
        grad -= nrm * u;
    }
    let gscale = 1.0f64.max(p.g.amax()).max(h.amax() * x.amax());
    let mut resid = grad.amax() / gscale;
    for con in &cons {
        let s = con.normal.dot(&x) - con.rhs;
        let v = if con.equality { s.abs() } else { (-s).max(0.0) };
        resid = resid.max(v / (1.0 + con.rhs.abs()));
    }
    for (u, &eq) in act.u.iter().zip(&act.equality) {
        if !eq {
            resid = resid.max((-u).max(0.0) / gscale);
        }
    }
    Ok(QpSolution { objective: p.objective(&x), x, iterations: changes, kkt_residual: resid, active_constraints: q })
}
