use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Partition;
use crate::error::{Error, Result};

/// Default relative step for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Jacobian of `f_i` with respect to `x^i` and to each neighbor state (in the partition's neighbor order).
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobian {
    pub own: DMatrix<f64>,
    pub neighbors: Vec<DMatrix<f64>>,
}

/// Discrete-time dynamics and output map of one subsystem.
///
/// `neighbors` always arrives in the order of [`Partition::neighbors`].
pub trait SubsystemDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// `f_i(x^i, X^i)` at sampling instant `k`.
    fn step(&self, k: usize, own: &DVector<f64>, neighbors: &[DVector<f64>]) -> DVector<f64>;
    /// `h_i(x^i)`.
    fn output(&self, own: &DVector<f64>) -> DVector<f64>;

    fn step_jacobian(&self, _k: usize, _own: &DVector<f64>, _neighbors: &[DVector<f64>]) -> Option<StepJacobian> {
        None
    }

    fn output_jacobian(&self, _own: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Center of the probe cloud used to validate the subsystem at registration.
    fn nominal_state(&self) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }
}

/// Central-difference Jacobian with per-coordinate step `max(rel, rel·|x_j|)`.
pub fn central_difference<F>(f: F, x: &DVector<f64>, rel: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut rows = None;
    for j in 0..x.len() {
        let h = rel.max(rel * x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        let col = (fp - fm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { coordinate: j, context: "finite-difference column".into() });
        }
        rows = Some(col.len());
        cols.push(col);
    }
    let m = rows.unwrap_or(0);
    Ok(DMatrix::from_fn(m, x.len(), |r, c| cols[c][r]))
}

fn check_finite(v: &DVector<f64>, offset: usize, context: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(p) => Err(Error::Evaluation { coordinate: offset + p, context: context.into() }),
        None => Ok(()),
    }
}

/// Interconnected nonlinear system `x⁺ = f(x)`, `y = h(x)` assembled from subsystems.
#[derive(Clone)]
pub struct NonlinearModel {
    partition: Partition,
    subsystems: Vec<Arc<dyn SubsystemDynamics>>,
}

impl std::fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearModel").field("partition", &self.partition).finish_non_exhaustive()
    }
}

impl NonlinearModel {
    /// Registers subsystems against a partition and probes them at 10 points around their nominal state.
    pub fn new(partition: Partition, subsystems: Vec<Arc<dyn SubsystemDynamics>>) -> Result<Self> {
        if subsystems.len() != partition.n() {
            return Err(Error::dim(format!(
                "{} subsystems registered against a {}-block partition",
                subsystems.len(),
                partition.n()
            )));
        }
        for (i, s) in subsystems.iter().enumerate() {
            if s.state_dim() != partition.state_dim(i) || s.output_dim() != partition.output_dim(i) {
                return Err(Error::Model(format!(
                    "subsystem {i} declares ({}, {}) states/outputs, partition expects ({}, {})",
                    s.state_dim(),
                    s.output_dim(),
                    partition.state_dim(i),
                    partition.output_dim(i)
                )));
            }
        }
        let model = Self { partition, subsystems };
        model.probe()?;
        Ok(model)
    }

    fn probe(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let p = &self.partition;
        let nominal: Vec<DVector<f64>> = self.subsystems.iter().map(|s| s.nominal_state()).collect();
        for _ in 0..10 {
            let pts: Vec<DVector<f64>> = nominal
                .iter()
                .map(|c| c.map(|v| v + 0.01 * (1.0 + v.abs()) * rng.random_range(-1.0..1.0)))
                .collect();
            for (i, s) in self.subsystems.iter().enumerate() {
                let nb: Vec<DVector<f64>> = p.neighbors(i).iter().map(|&l| pts[l].clone()).collect();
                let a = s.step(0, &pts[i], &nb);
                let b = s.step(0, &pts[i], &nb);
                if a.len() != p.state_dim(i) {
                    return Err(Error::Model(format!("f_{i} returned {} entries, expected {}", a.len(), p.state_dim(i))));
                }
                if a.iter().zip(b.iter()).any(|(u, v)| u.to_bits() != v.to_bits()) {
                    return Err(Error::Model(format!("f_{i} is not deterministic")));
                }
                check_finite(&a, p.state_range(i).start, "probe of f_i")?;
                let ya = s.output(&pts[i]);
                let yb = s.output(&pts[i]);
                if ya.len() != p.output_dim(i) {
                    return Err(Error::Model(format!("h_{i} returned {} entries, expected {}", ya.len(), p.output_dim(i))));
                }
                if ya.iter().zip(yb.iter()).any(|(u, v)| u.to_bits() != v.to_bits()) {
                    return Err(Error::Model(format!("h_{i} is not deterministic")));
                }
                check_finite(&ya, p.output_range(i).start, "probe of h_i")?;
                if let Some(j) = s.step_jacobian(0, &pts[i], &nb) {
                    let ok = j.own.shape() == (p.state_dim(i), p.state_dim(i))
                        && j.neighbors.len() == nb.len()
                        && j.neighbors
                            .iter()
                            .zip(p.neighbors(i))
                            .all(|(m, &l)| m.shape() == (p.state_dim(i), p.state_dim(l)));
                    if !ok {
                        return Err(Error::Model(format!("analytic Jacobian of f_{i} has wrong shape")));
                    }
                }
                if let Some(j) = s.output_jacobian(&pts[i]) {
                    if j.shape() != (p.output_dim(i), p.state_dim(i)) {
                        return Err(Error::Model(format!("analytic Jacobian of h_{i} has wrong shape")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn subsystem(&self, i: usize) -> &dyn SubsystemDynamics {
        self.subsystems[i].as_ref()
    }

    fn neighbor_states(&self, i: usize, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.partition
            .neighbors(i)
            .iter()
            .map(|&l| x.rows_range(self.partition.state_range(l)).into_owned())
            .collect()
    }

    /// `f_i(own, X^i)` with neighbor states read from `x_global`.
    pub fn f_i(&self, i: usize, k: usize, own: &DVector<f64>, x_global: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.subsystems[i].step(k, own, &self.neighbor_states(i, x_global));
        check_finite(&out, self.partition.state_range(i).start, "f_i")?;
        Ok(out)
    }

    pub fn f(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.partition.nx());
        for i in 0..self.partition.n() {
            let r = self.partition.state_range(i);
            let own = x.rows_range(r.clone()).into_owned();
            out.rows_range_mut(r).copy_from(&self.f_i(i, k, &own, x)?);
        }
        Ok(out)
    }

    pub fn h_i(&self, i: usize, own: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.subsystems[i].output(own);
        check_finite(&out, self.partition.output_range(i).start, "h_i")?;
        Ok(out)
    }

    pub fn h(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.partition.ny());
        for i in 0..self.partition.n() {
            let own = x.rows_range(self.partition.state_range(i)).into_owned();
            out.rows_range_mut(self.partition.output_range(i)).copy_from(&self.h_i(i, &own)?);
        }
        Ok(out)
    }

    /// `∂f_i/∂x^i` and `∂f_i/∂x^l` for each neighbor `l`, analytic when the subsystem supplies it.
    pub fn step_jacobian(
        &self,
        i: usize,
        k: usize,
        own: &DVector<f64>,
        x_global: &DVector<f64>,
    ) -> Result<StepJacobian> {
        let nb = self.neighbor_states(i, x_global);
        if let Some(j) = self.subsystems[i].step_jacobian(k, own, &nb) {
            return Ok(j);
        }
        self.step_jacobian_fd(i, k, own, x_global, FD_STEP)
    }

    /// Finite-difference path, bypassing any analytic provider.
    pub fn step_jacobian_fd(
        &self,
        i: usize,
        k: usize,
        own: &DVector<f64>,
        x_global: &DVector<f64>,
        rel: f64,
    ) -> Result<StepJacobian> {
        let sub = &self.subsystems[i];
        let nb = self.neighbor_states(i, x_global);
        let eval = |o: &DVector<f64>, n: &[DVector<f64>]| {
            let v = sub.step(k, o, n);
            check_finite(&v, 0, "f_i").map(|_| v)
        };
        let base = self.partition.state_range(i).start;
        let own_j = central_difference(|o| eval(o, &nb), own, rel)
            .map_err(|e| shift_coordinate(e, base))?;
        let mut neighbors = Vec::with_capacity(nb.len());
        for (idx, &l) in self.partition.neighbors(i).iter().enumerate() {
            let jl = central_difference(
                |v| {
                    let mut n2 = nb.clone();
                    n2[idx] = v.clone();
                    eval(own, &n2)
                },
                &nb[idx],
                rel,
            )
            .map_err(|e| shift_coordinate(e, self.partition.state_range(l).start))?;
            neighbors.push(jl);
        }
        Ok(StepJacobian { own: own_j, neighbors })
    }

    /// `∂h_i/∂x^i`.
    pub fn output_jacobian(&self, i: usize, own: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(j) = self.subsystems[i].output_jacobian(own) {
            return Ok(j);
        }
        let sub = &self.subsystems[i];
        central_difference(
            |o| {
                let v = sub.output(o);
                check_finite(&v, 0, "h_i").map(|_| v)
            },
            own,
            FD_STEP,
        )
        .map_err(|e| shift_coordinate(e, self.partition.state_range(i).start))
    }

    /// Dense `(A_k, C_k)` at `x`. Blocks outside the interaction graph are exactly zero and `C_k` is block diagonal.
    pub fn linearize(&self, k: usize, x: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let p = &self.partition;
        if x.len() != p.nx() {
            return Err(Error::dim(format!("state has length {}, expected {}", x.len(), p.nx())));
        }
        let mut a = DMatrix::zeros(p.nx(), p.nx());
        let mut c = DMatrix::zeros(p.ny(), p.nx());
        for i in 0..p.n() {
            let ri = p.state_range(i);
            let own = x.rows_range(ri.clone()).into_owned();
            let j = self.step_jacobian(i, k, &own, x)?;
            a.view_mut((ri.start, ri.start), (ri.len(), ri.len())).copy_from(&j.own);
            for (m, &l) in j.neighbors.iter().zip(p.neighbors(i)) {
                let rl = p.state_range(l);
                a.view_mut((ri.start, rl.start), (ri.len(), rl.len())).copy_from(m);
            }
            let ro = p.output_range(i);
            c.view_mut((ro.start, ri.start), (ro.len(), ri.len()))
                .copy_from(&self.output_jacobian(i, &own)?);
        }
        Ok((a, c))
    }
}

fn shift_coordinate(e: Error, base: usize) -> Error {
    match e {
        Error::Evaluation { coordinate, context } => Error::Evaluation { coordinate: coordinate + base, context },
        other => other,
    }
}
