//! Full-information least squares by dense normal equations.
//!
//! Deliberately assembled straight from the model matrices, sharing no code
//! with the window residual builder, so the two can check each other.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, spd_factor, symmetrize, whitening};
use crate::model::PartitionedLinearModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieMode {
    /// All states jointly, with `y_j = Cx_j` at every instant.
    Centralized,
    /// Own states of one subsystem with neighbors injected from `x̃`.
    Distributed(usize),
}

struct Stack {
    rows: Vec<DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
    cols: usize,
}

impl Stack {
    fn new(cols: usize) -> Self {
        Self { rows: vec![], rhs: vec![], cols }
    }

    /// Append `L(Σ_b M_b z_b − d)` where blocks sit at the given column offsets.
    fn push(&mut self, l: &DMatrix<f64>, blocks: &[(usize, DMatrix<f64>)], d: DVector<f64>) {
        let mut row = DMatrix::zeros(l.nrows(), self.cols);
        for (off, m) in blocks {
            let lm = l * m;
            let mut v = row.view_mut((0, *off), (lm.nrows(), lm.ncols()));
            v += lm;
        }
        self.rows.push(row);
        self.rhs.push(l * d);
    }

    fn normal(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::zeros(self.cols, self.cols);
        let mut g = DVector::zeros(self.cols);
        for (a, b) in self.rows.iter().zip(&self.rhs) {
            h += a.transpose() * a;
            g += a.transpose() * b;
        }
        (symmetrize(&h), g)
    }
}

/// Normal equations `H z = rhs` of the full-information problem at `k = ys.len() − 1`.
///
/// `x_tilde` holds `x̃_0..x̃_{k−1}` (at least one entry; `x̃_0` also serves the `y_0`
/// term). `include_last_output = false` drops the term on `y_k`.
pub fn fie_normal_equations(
    model: &PartitionedLinearModel,
    ys: &[DVector<f64>],
    x_bar0: &DVector<f64>,
    mode: FieMode,
    x_tilde: &[DVector<f64>],
    include_last_output: bool,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = model.partition();
    if ys.is_empty() {
        return Err(Error::dim("full-information problem needs at least y_0"));
    }
    let k = ys.len() - 1;
    if x_bar0.len() != p.nx() || ys.iter().any(|y| y.len() != p.ny()) {
        return Err(Error::dim("prior or measurements do not match the model"));
    }
    let lr = whitening(model.r(), "R")?;
    match mode {
        FieMode::Centralized => {
            let nx = p.nx();
            let lp = whitening(&block_diag(model.p0_blocks()), "P0")?;
            let lq = whitening(&block_diag(model.q_blocks()), "Q")?;
            let (a, c) = model.assemble_global();
            let eye = DMatrix::identity(nx, nx);
            let mut s = Stack::new((k + 1) * nx);
            s.push(&lp, &[(0, eye.clone())], x_bar0.clone());
            for j in 0..k {
                s.push(&lq, &[((j + 1) * nx, eye.clone()), (j * nx, -&a)], DVector::zeros(nx));
            }
            for (j, y) in ys.iter().enumerate() {
                if j == k && !include_last_output {
                    continue;
                }
                s.push(&lr, &[(j * nx, c.clone())], y.clone());
            }
            Ok(s.normal())
        }
        FieMode::Distributed(i) => {
            if i >= p.n() {
                return Err(Error::dim(format!("no subsystem {i}")));
            }
            if x_tilde.len() < k.max(1) || x_tilde.iter().any(|x| x.len() != p.nx()) {
                return Err(Error::dim(format!("need {} neighbor snapshots of length {}", k.max(1), p.nx())));
            }
            let m = p.state_dim(i);
            let sel = model.selectors();
            let lp = whitening(model.p0(i), "P0_i")?;
            let lq = whitening(model.q(i), "Q_i")?;
            let c = model.c();
            let a_ii = model.a_block(i, i).clone();
            let eye = DMatrix::identity(m, m);
            let ri = p.state_range(i);
            let mut s = Stack::new((k + 1) * m);
            s.push(&lp, &[(0, eye.clone())], x_bar0.rows_range(ri.clone()).into_owned());
            if k > 0 || include_last_output {
                s.push(&lr, &[(0, sel.c_star[i].clone())], &ys[0] - &sel.c_tilde[i] * &x_tilde[0]);
            }
            let ca = c * &sel.a_star[i];
            let cat = c * &sel.a_tilde[i];
            for j in 0..k {
                let mut drive = DVector::zeros(m);
                for l in p.neighbors(i) {
                    drive += model.a_block(i, *l) * x_tilde[j].rows_range(p.state_range(*l));
                }
                s.push(&lq, &[((j + 1) * m, eye.clone()), (j * m, -&a_ii)], drive);
                if j + 1 == k && !include_last_output {
                    continue;
                }
                s.push(&lr, &[(j * m, ca.clone())], &ys[j + 1] - &cat * &x_tilde[j]);
            }
            Ok(s.normal())
        }
    }
}

/// Minimizer of the full-information problem, one state vector per instant.
pub fn solve_fie_oracle(
    model: &PartitionedLinearModel,
    ys: &[DVector<f64>],
    x_bar0: &DVector<f64>,
    mode: FieMode,
    x_tilde: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let (h, g) = fie_normal_equations(model, ys, x_bar0, mode, x_tilde, true)?;
    let z = spd_factor(&h, "full-information normal matrix")?.solve(&g);
    let m = match mode {
        FieMode::Centralized => model.partition().nx(),
        FieMode::Distributed(i) => model.partition().state_dim(i),
    };
    Ok((0..ys.len()).map(|j| z.rows(j * m, m).into_owned()).collect())
}

/// Information carried by the last `m` coordinates after eliminating the rest (Schur complement).
pub fn schur_last_block(h: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if m > n || !h.is_square() {
        return Err(Error::dim("Schur block larger than the matrix"));
    }
    let a = n - m;
    let hbb = h.view((a, a), (m, m)).into_owned();
    if a == 0 {
        return Ok(hbb);
    }
    let haa = h.view((0, 0), (a, a)).into_owned();
    let hab = h.view((0, a), (a, m)).into_owned();
    let sol = spd_factor(&haa, "eliminated block")?.solve(&hab);
    Ok(symmetrize(&(hbb - hab.transpose() * sol)))
}
