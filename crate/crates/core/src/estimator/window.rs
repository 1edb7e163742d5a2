use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inv_weighted_sq, whitening};
use crate::local::LocalModel;

/// Box bounds on own states (𝕏) and on disturbances (𝕎).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub x_lower: DVector<f64>,
    pub x_upper: DVector<f64>,
    pub w_lower: DVector<f64>,
    pub w_upper: DVector<f64>,
    /// Bound every window state and disturbance, not just the newest state.
    pub constrain_all_window: bool,
}

impl ConstraintSet {
    pub fn unbounded(n: usize) -> Self {
        Self {
            x_lower: DVector::from_element(n, f64::NEG_INFINITY),
            x_upper: DVector::from_element(n, f64::INFINITY),
            w_lower: DVector::from_element(n, f64::NEG_INFINITY),
            w_upper: DVector::from_element(n, f64::INFINITY),
            constrain_all_window: false,
        }
    }

    pub fn state_box(lower: DVector<f64>, upper: DVector<f64>, constrain_all_window: bool) -> Result<Self> {
        let n = lower.len();
        let s = Self { x_lower: lower, x_upper: upper, constrain_all_window, ..Self::unbounded(n) };
        s.validate(n)?;
        Ok(s)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (what, lo, hi) in [("state", &self.x_lower, &self.x_upper), ("disturbance", &self.w_lower, &self.w_upper)] {
            if lo.len() != n || hi.len() != n {
                return Err(Error::dim(format!("{what} bounds must have length {n}")));
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
                return Err(Error::Infeasible(format!("{what} lower bound exceeds upper bound")));
            }
        }
        Ok(())
    }

    pub fn is_unbounded(&self) -> bool {
        let inf = |v: &DVector<f64>| v.iter().all(|x| x.is_infinite());
        inf(&self.x_lower) && inf(&self.x_upper) && inf(&self.w_lower) && inf(&self.w_upper)
    }

    fn has_w_bounds(&self) -> bool {
        self.w_lower.iter().chain(self.w_upper.iter()).any(|x| x.is_finite())
    }
}

/// Which measurement rows enter the local objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputRows {
    All,
    Own,
}

/// Quadratic prior `‖x_start − center‖²_{weight⁻¹}` on the first window state.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrior {
    pub center: DVector<f64>,
    pub weight: DMatrix<f64>,
}

/// Data for one local problem over instants `start..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationWindow {
    pub k: usize,
    pub start: usize,
    /// `y_start..=y_k`.
    pub ys: Vec<DVector<f64>>,
    /// Global neighbor snapshots `x̃_start..x̃_{k−1}`; own blocks are ignored.
    pub x_tilde: Vec<DVector<f64>>,
    pub prior: Option<WindowPrior>,
    /// Neighbor snapshot for the direct output term on `y_start`; `None` drops the term.
    pub direct: Option<DVector<f64>>,
    pub rows: OutputRows,
}

impl EstimationWindow {
    pub fn len(&self) -> usize {
        self.k - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.k == self.start
    }

    pub(crate) fn validate(&self, local: &dyn LocalModel) -> Result<()> {
        if self.k < self.start {
            return Err(Error::dim("window ends before it starts"));
        }
        let l = self.len();
        if self.ys.len() != l + 1 || self.x_tilde.len() != l {
            return Err(Error::dim(format!(
                "window of length {l} holds {} measurements and {} neighbor snapshots",
                self.ys.len(),
                self.x_tilde.len()
            )));
        }
        if let Some(y) = self.ys.iter().find(|y| y.len() != local.output_dim()) {
            return Err(Error::dim(format!("measurement of length {}, expected {}", y.len(), local.output_dim())));
        }
        if let Some(p) = &self.prior {
            if p.center.len() != local.own_dim() || p.weight.shape() != (local.own_dim(), local.own_dim()) {
                return Err(Error::dim("arrival prior does not match the subsystem dimension"));
            }
        }
        if self.prior.is_none() && self.direct.is_none() && l == 0 {
            return Err(Error::Rank("window has no terms constraining its only state".into()));
        }
        Ok(())
    }
}

/// Local noise weights: own `Q_i` and the full-system `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Optimal window estimate with its residual sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub start: usize,
    /// `x̂_start..=x̂_k`.
    pub x: Vec<DVector<f64>>,
    /// `ŵ_start..ŵ_{k−1}`.
    pub w: Vec<DVector<f64>>,
    /// Direct output residual on `y_start`, if that term is present.
    pub v_direct: Option<DVector<f64>>,
    /// Predicted output residuals on `y_{start+1}..=y_k`.
    pub v: Vec<DVector<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// False when an iterative solve hit its cap and this is the best iterate found.
    pub converged: bool,
}

impl LocalSolution {
    pub fn last(&self) -> &DVector<f64> {
        self.x.last().expect("solutions are never empty")
    }

    /// Objective rebuilt from the stored sequences.
    pub fn recompute_objective(&self, window: &EstimationWindow, weights: &LocalWeights, rows: &std::ops::Range<usize>) -> Result<f64> {
        let r = restricted_r(&weights.r, window.rows, rows);
        let mut total = 0.0;
        if let Some(p) = &window.prior {
            total += inv_weighted_sq(&(&self.x[0] - &p.center), &p.weight, "arrival weight")?;
        }
        if let Some(v) = &self.v_direct {
            total += inv_weighted_sq(v, &r, "R")?;
        }
        for w in &self.w {
            total += inv_weighted_sq(w, &weights.q, "Q")?;
        }
        for v in &self.v {
            total += inv_weighted_sq(v, &r, "R")?;
        }
        Ok(total)
    }
}

pub(crate) fn restricted_r(r: &DMatrix<f64>, rows: OutputRows, own: &std::ops::Range<usize>) -> DMatrix<f64> {
    match rows {
        OutputRows::All => r.clone(),
        OutputRows::Own => r.view((own.start, own.start), (own.len(), own.len())).into_owned(),
    }
}

fn select(v: DVector<f64>, rows: OutputRows, own: &std::ops::Range<usize>) -> DVector<f64> {
    match rows {
        OutputRows::All => v,
        OutputRows::Own => v.rows_range(own.clone()).into_owned(),
    }
}

fn select_m(m: DMatrix<f64>, rows: OutputRows, own: &std::ops::Range<usize>) -> DMatrix<f64> {
    match rows {
        OutputRows::All => m,
        OutputRows::Own => m.rows_range(own.clone()).into_owned(),
    }
}

/// Whitened residual map of one window problem, with states as the only decision variables.
pub(crate) struct WindowProblem<'a> {
    pub window: &'a EstimationWindow,
    pub local: &'a dyn LocalModel,
    wp: Option<DMatrix<f64>>,
    wq: DMatrix<f64>,
    wr: DMatrix<f64>,
    own_rows: std::ops::Range<usize>,
    pub m: usize,
}

/// Residuals at a point, raw and whitened, with the whitened Jacobian.
pub(crate) struct Evaluation {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub w: Vec<DVector<f64>>,
    pub w_jac: Vec<DMatrix<f64>>,
    pub v_direct: Option<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.residual.norm_squared()
    }
}

impl<'a> WindowProblem<'a> {
    pub fn new(window: &'a EstimationWindow, local: &'a dyn LocalModel, weights: &LocalWeights) -> Result<Self> {
        window.validate(local)?;
        let m = local.own_dim();
        if weights.q.shape() != (m, m) || weights.r.shape() != (local.output_dim(), local.output_dim()) {
            return Err(Error::dim("local weights do not match the subsystem"));
        }
        let own_rows = local.own_rows();
        let wp = match &window.prior {
            Some(p) => Some(whitening(&p.weight, "arrival weight")?),
            None => None,
        };
        let r = restricted_r(&weights.r, window.rows, &own_rows);
        let wr = if r.nrows() == 0 { r.clone() } else { whitening(&r, "R")? };
        Ok(Self { window, local, wp, wq: whitening(&weights.q, "Q")?, wr, own_rows, m })
    }

    pub fn n_states(&self) -> usize {
        self.window.len() + 1
    }

    pub fn n_vars(&self) -> usize {
        self.n_states() * self.m
    }

    fn n_rows(&self) -> usize {
        let ny = self.wr.nrows();
        let l = self.window.len();
        self.wp.as_ref().map_or(0, |w| w.nrows())
            + if self.window.direct.is_some() { ny } else { 0 }
            + l * (self.m + ny)
    }

    pub fn split(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.n_states()).map(|j| z.rows(j * self.m, self.m).into_owned()).collect()
    }

    pub fn evaluate(&self, z: &DVector<f64>) -> Result<Evaluation> {
        let xs = self.split(z);
        let m = self.m;
        let ny = self.wr.nrows();
        let mut res = DVector::zeros(self.n_rows());
        let mut jac = DMatrix::zeros(self.n_rows(), self.n_vars());
        let mut row = 0;
        let win = self.window;
        if let (Some(wp), Some(p)) = (&self.wp, &win.prior) {
            res.rows_mut(row, m).copy_from(&(wp * (&xs[0] - &p.center)));
            jac.view_mut((row, 0), (m, m)).copy_from(wp);
            row += m;
        }
        let mut v_direct = None;
        if let Some(xt) = &win.direct {
            let (yhat, g) = self.local.direct_output(&xs[0], xt)?;
            let v = select(&win.ys[0] - yhat, win.rows, &self.own_rows);
            let g = select_m(g, win.rows, &self.own_rows);
            res.rows_mut(row, ny).copy_from(&(&self.wr * &v));
            jac.view_mut((row, 0), (ny, m)).copy_from(&(-(&self.wr * g)));
            v_direct = Some(v);
            row += ny;
        }
        let mut ws = Vec::with_capacity(win.len());
        let mut w_jac = Vec::with_capacity(win.len());
        let mut vs = Vec::with_capacity(win.len());
        for j in 0..win.len() {
            let t = win.start + j;
            let (fx, f) = self.local.step(t, &xs[j], &win.x_tilde[j])?;
            let w = &xs[j + 1] - fx;
            res.rows_mut(row, m).copy_from(&(&self.wq * &w));
            jac.view_mut((row, (j + 1) * m), (m, m)).copy_from(&self.wq);
            jac.view_mut((row, j * m), (m, m)).copy_from(&(-(&self.wq * &f)));
            row += m;
            ws.push(w);
            w_jac.push(f);

            let (yhat, g) = self.local.predicted_output(t, &xs[j], &win.x_tilde[j])?;
            let v = select(&win.ys[j + 1] - yhat, win.rows, &self.own_rows);
            let g = select_m(g, win.rows, &self.own_rows);
            res.rows_mut(row, ny).copy_from(&(&self.wr * &v));
            jac.view_mut((row, j * m), (ny, m)).copy_from(&(-(&self.wr * g)));
            row += ny;
            vs.push(v);
        }
        debug_assert_eq!(row, res.len());
        Ok(Evaluation { residual: res, jacobian: jac, w: ws, w_jac, v_direct, v: vs })
    }

    /// Simple bounds on the decision vector.
    pub fn state_bounds(&self, c: &ConstraintSet) -> (DVector<f64>, DVector<f64>) {
        let n = self.n_vars();
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        let first = if c.constrain_all_window { 0 } else { self.n_states() - 1 };
        for j in first..self.n_states() {
            lo.rows_mut(j * self.m, self.m).copy_from(&c.x_lower);
            hi.rows_mut(j * self.m, self.m).copy_from(&c.x_upper);
        }
        (lo, hi)
    }

    /// Linearized disturbance constraints `w_lower ≤ w + J_w Δ ≤ w_upper`, as rows on `Δ`.
    pub fn w_rows(&self, c: &ConstraintSet, ev: &Evaluation) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = self.n_vars();
        if !c.constrain_all_window || !c.has_w_bounds() {
            return (DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0));
        }
        let m = self.m;
        let l = self.window.len();
        let mut g = DMatrix::zeros(l * m, n);
        let mut lo = DVector::zeros(l * m);
        let mut hi = DVector::zeros(l * m);
        for j in 0..l {
            g.view_mut((j * m, (j + 1) * m), (m, m)).fill_with_identity();
            g.view_mut((j * m, j * m), (m, m)).copy_from(&(-&ev.w_jac[j]));
            lo.rows_mut(j * m, m).copy_from(&(&c.w_lower - &ev.w[j]));
            hi.rows_mut(j * m, m).copy_from(&(&c.w_upper - &ev.w[j]));
        }
        (g, lo, hi)
    }
}
