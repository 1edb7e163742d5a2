//! Per-subsystem view of a model: the maps one estimator needs, evaluated with
//! neighbor states taken from a global vector `xt` whose own block is ignored.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{NonlinearModel, PartitionedLinearModel, Selectors};

/// Value and Jacobian with respect to the subsystem's own state.
pub type Linearization = (DVector<f64>, DMatrix<f64>);

pub trait LocalModel: Sync {
    fn subsystem(&self) -> usize;
    fn own_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn own_rows(&self) -> Range<usize>;
    fn is_linear(&self) -> bool;

    /// `f_i(x, X̃_j)` at instant `j`.
    fn step(&self, j: usize, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization>;
    /// `h` of the composite state (own block `x`, neighbors from `xt`), all rows.
    fn direct_output(&self, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization>;
    /// `h(f(composite))`: the one-step-ahead output predicted from instant `j`, all rows.
    fn predicted_output(&self, j: usize, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization>;
}

fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::dim(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// Linear subsystem view with the products it needs precomputed.
#[derive(Debug, Clone)]
pub struct LinearLocal<'a> {
    model: &'a PartitionedLinearModel,
    i: usize,
    c_col: DMatrix<f64>,
    c_tilde: DMatrix<f64>,
    ca_col: DMatrix<f64>,
    ca_tilde: DMatrix<f64>,
}

impl<'a> LinearLocal<'a> {
    pub fn new(model: &'a PartitionedLinearModel, sel: &Selectors, i: usize) -> Self {
        let c = model.c();
        Self {
            model,
            i,
            c_col: sel.c_star[i].clone(),
            c_tilde: sel.c_tilde[i].clone(),
            ca_col: c * &sel.a_star[i],
            ca_tilde: c * &sel.a_tilde[i],
        }
    }
}

impl LocalModel for LinearLocal<'_> {
    fn subsystem(&self) -> usize {
        self.i
    }
    fn own_dim(&self) -> usize {
        self.model.partition().state_dim(self.i)
    }
    fn output_dim(&self) -> usize {
        self.model.partition().ny()
    }
    fn own_rows(&self) -> Range<usize> {
        self.model.partition().output_range(self.i)
    }
    fn is_linear(&self) -> bool {
        true
    }

    fn step(&self, _j: usize, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization> {
        check_len(x, self.own_dim(), "own state")?;
        check_len(xt, self.model.partition().nx(), "neighbor snapshot")?;
        let a = self.model.a_block(self.i, self.i);
        Ok((a * x + self.model.coupling_input(self.i, xt), a.clone()))
    }

    fn direct_output(&self, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization> {
        check_len(x, self.own_dim(), "own state")?;
        check_len(xt, self.model.partition().nx(), "neighbor snapshot")?;
        Ok((&self.c_col * x + &self.c_tilde * xt, self.c_col.clone()))
    }

    fn predicted_output(&self, _j: usize, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization> {
        check_len(x, self.own_dim(), "own state")?;
        check_len(xt, self.model.partition().nx(), "neighbor snapshot")?;
        Ok((&self.ca_col * x + &self.ca_tilde * xt, self.ca_col.clone()))
    }
}

/// Nonlinear subsystem view; Jacobians come from the model's providers.
#[derive(Debug, Clone)]
pub struct NonlinearLocal<'a> {
    model: &'a NonlinearModel,
    i: usize,
}

impl<'a> NonlinearLocal<'a> {
    pub fn new(model: &'a NonlinearModel, i: usize) -> Self {
        Self { model, i }
    }

    fn composite(&self, x: &DVector<f64>, xt: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.model.partition();
        check_len(x, p.state_dim(self.i), "own state")?;
        check_len(xt, p.nx(), "neighbor snapshot")?;
        let mut c = xt.clone();
        c.rows_range_mut(p.state_range(self.i)).copy_from(x);
        Ok(c)
    }
}

impl LocalModel for NonlinearLocal<'_> {
    fn subsystem(&self) -> usize {
        self.i
    }
    fn own_dim(&self) -> usize {
        self.model.partition().state_dim(self.i)
    }
    fn output_dim(&self) -> usize {
        self.model.partition().ny()
    }
    fn own_rows(&self) -> Range<usize> {
        self.model.partition().output_range(self.i)
    }
    fn is_linear(&self) -> bool {
        false
    }

    fn step(&self, j: usize, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization> {
        let comp = self.composite(x, xt)?;
        let v = self.model.f_i(self.i, j, x, &comp)?;
        let jac = self.model.step_jacobian(self.i, j, x, &comp)?.own;
        Ok((v, jac))
    }

    fn direct_output(&self, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization> {
        let p = self.model.partition();
        let comp = self.composite(x, xt)?;
        let y = self.model.h(&comp)?;
        let mut jac = DMatrix::zeros(p.ny(), p.state_dim(self.i));
        let r = p.output_range(self.i);
        jac.rows_mut(r.start, r.len()).copy_from(&self.model.output_jacobian(self.i, x)?);
        Ok((y, jac))
    }

    fn predicted_output(&self, j: usize, x: &DVector<f64>, xt: &DVector<f64>) -> Result<Linearization> {
        let p = self.model.partition();
        let comp = self.composite(x, xt)?;
        let next = self.model.f(j, &comp)?;
        let y = self.model.h(&next)?;
        let mut jac = DMatrix::zeros(p.ny(), p.state_dim(self.i));
        for l in p.dependents(self.i) {
            let rl = p.state_range(l);
            let own_l = comp.rows_range(rl.clone()).into_owned();
            let sj = self.model.step_jacobian(l, j, &own_l, &comp)?;
            let dfl = if l == self.i {
                sj.own
            } else {
                let pos = p.neighbors(l).iter().position(|&m| m == self.i).expect("dependent lists i");
                sj.neighbors[pos].clone()
            };
            let next_l = next.rows_range(rl).into_owned();
            let dh = self.model.output_jacobian(l, &next_l)?;
            let ro = p.output_range(l);
            jac.rows_mut(ro.start, ro.len()).copy_from(&(dh * dfl));
        }
        Ok((y, jac))
    }
}
