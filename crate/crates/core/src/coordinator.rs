//! Per-instant orchestration of the local estimators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrival::{self, ArrivalCostState, ArrivalTrace};
use crate::error::{Error, Result};
use crate::estimator::{
    gauss_newton_best_effort, solve_fie_oracle, solve_local_mhe_linear, solve_local_mhe_nonlinear, ConstraintSet, EstimationWindow, FieMode,
    LocalSolution, LocalWeights, OutputRows, WindowPrior, WindowProblem,
};
use crate::linalg::block_diag;
use crate::local::{LinearLocal, LocalModel, NonlinearLocal};
use crate::model::{NonlinearModel, Partition, PartitionedLinearModel, Selectors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Proposed,
    Dmhe1,
    Dmhe2,
    Dmhe3,
    FieOracle,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Proposed, Variant::Dmhe1, Variant::Dmhe2, Variant::Dmhe3, Variant::FieOracle];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Dmhe1 => "dmhe1",
            Variant::Dmhe2 => "dmhe2",
            Variant::Dmhe3 => "dmhe3",
            Variant::FieOracle => "fie-oracle",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", "variant", format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalMode {
    Recursive,
    /// Constant weight (the configured `P_{i,0}`) centred on the propagated estimate.
    Constant,
    None,
}

/// Center of a constant arrival cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantCenter {
    /// `f_i` applied to the previous estimate of `x_{k−N−1}`.
    Prediction,
    /// The initial guess `x̄_0`, at every instant.
    InitialGuess,
}

/// Where the recursive arrival cost attaches to the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalAnchor {
    /// `(x̆_{k−N}, P̆_{k−N})`, which already carries `y_{k−N}`; no direct output term.
    Chain,
    /// Read-out `(x̄_{k−N}, P_{k−N})` plus the direct output term on `y_{k−N}`.
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub horizon: usize,
    pub use_neighbor_measurements: bool,
    pub arrival_mode: ArrivalMode,
    pub anchor: ArrivalAnchor,
    pub constant_center: ConstantCenter,
}

impl VariantConfig {
    pub fn new(variant: Variant, horizon: usize) -> Self {
        let (use_neighbor_measurements, arrival_mode) = match variant {
            Variant::Proposed | Variant::FieOracle => (true, ArrivalMode::Recursive),
            Variant::Dmhe1 => (false, ArrivalMode::Constant),
            Variant::Dmhe2 => (false, ArrivalMode::None),
            Variant::Dmhe3 => (true, ArrivalMode::Constant),
        };
        let constant_center = if variant == Variant::Dmhe3 { ConstantCenter::InitialGuess } else { ConstantCenter::Prediction };
        Self { variant, horizon, use_neighbor_measurements, arrival_mode, anchor: ArrivalAnchor::Chain, constant_center }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("variant", "horizon", "window length must be at least 1"));
        }
        let expect = VariantConfig::new(self.variant, self.horizon);
        if expect.use_neighbor_measurements != self.use_neighbor_measurements || expect.arrival_mode != self.arrival_mode {
            return Err(Error::config(
                "variant",
                "arrival_mode",
                format!("{} requires {:?} arrival cost with neighbor measurements {}", self.variant.name(), expect.arrival_mode, expect.use_neighbor_measurements),
            ));
        }
        Ok(())
    }

    fn rows(&self) -> OutputRows {
        if self.use_neighbor_measurements {
            OutputRows::All
        } else {
            OutputRows::Own
        }
    }
}

/// Model the estimators run on.
#[derive(Debug, Clone)]
pub enum EstimationModel {
    Linear(PartitionedLinearModel),
    Nonlinear(NonlinearModel),
}

impl EstimationModel {
    pub fn partition(&self) -> &Partition {
        match self {
            EstimationModel::Linear(m) => m.partition(),
            EstimationModel::Nonlinear(m) => m.partition(),
        }
    }
}

/// Estimator weights, independent of the model that generated the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub p0: Vec<DMatrix<f64>>,
}

impl Weights {
    pub fn from_linear(model: &PartitionedLinearModel) -> Self {
        Self { q: model.q_blocks().to_vec(), r: model.r_blocks().to_vec(), p0: model.p0_blocks().to_vec() }
    }

    /// `q·I`, `r·I`, `p0·I` blocks.
    pub fn scaled_identity(p: &Partition, q: f64, r: f64, p0: f64) -> Self {
        let eye = |d: usize, s: f64| DMatrix::identity(d, d) * s;
        Self {
            q: p.state_dims().iter().map(|&d| eye(d, q)).collect(),
            r: p.output_dims().iter().map(|&d| eye(d, r)).collect(),
            p0: p.state_dims().iter().map(|&d| eye(d, p0)).collect(),
        }
    }

    fn validate(&self, p: &Partition) -> Result<()> {
        let n = p.n();
        if self.q.len() != n || self.r.len() != n || self.p0.len() != n {
            return Err(Error::dim("weights must have one block per subsystem"));
        }
        for i in 0..n {
            let (m, o) = (p.state_dim(i), p.output_dim(i));
            if self.q[i].shape() != (m, m) || self.p0[i].shape() != (m, m) || self.r[i].shape() != (o, o) {
                return Err(Error::dim(format!("weight blocks of subsystem {i} have the wrong shape")));
            }
        }
        Ok(())
    }
}

/// Everything fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct EstimatorSetup {
    pub model: EstimationModel,
    pub weights: Weights,
    /// Global initial guess `x̄_0`.
    pub x_bar0: DVector<f64>,
    pub constraints: Vec<ConstraintSet>,
}

impl EstimatorSetup {
    /// Linear setup with the model's own weights and no bounds.
    pub fn linear(model: PartitionedLinearModel, x_bar0: DVector<f64>) -> Self {
        let constraints = model.partition().state_dims().iter().map(|&d| ConstraintSet::unbounded(d)).collect();
        Self { weights: Weights::from_linear(&model), model: EstimationModel::Linear(model), x_bar0, constraints }
    }

    fn validate(&self) -> Result<()> {
        let p = self.model.partition();
        self.weights.validate(p)?;
        if self.x_bar0.len() != p.nx() {
            return Err(Error::dim(format!("x̄_0 has length {}, expected {}", self.x_bar0.len(), p.nx())));
        }
        if self.constraints.len() != p.n() {
            return Err(Error::dim("one constraint set per subsystem is required"));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            c.validate(p.state_dim(i))?;
        }
        Ok(())
    }
}

/// Neighbor estimates `x̂_{j|k−1}` exchanged at the end of instant `stamp = k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeSnapshot {
    pub stamp: usize,
    pub start: usize,
    /// Per subsystem, `x̂^l_{start|stamp}..=x̂^l_{stamp|stamp}`.
    pub estimates: Vec<Vec<DVector<f64>>>,
}

impl ExchangeSnapshot {
    pub fn assert_causal(&self, k: usize) -> Result<()> {
        if self.stamp + 1 != k {
            return Err(Error::Numerical(format!("snapshot stamped {} read at instant {k}", self.stamp)));
        }
        Ok(())
    }

    fn global(&self, j: usize) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self.estimates.iter().map(|s| s[j - self.start].clone()).collect();
        crate::linalg::vstack_vec(&parts)
    }
}

/// Objective values of a run.
///
/// `collective[k]` is `Σ_i (Φ^i_k + π^i)`, the window optimum plus the constant the
/// arrival chain dropped; for linear subsystems this is the full-information optimum.
/// `per_subsystem`/`cumulative` keep the running sums with the previous optimum folded in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveLedger {
    pub per_subsystem: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub collective: Vec<f64>,
    /// Raw window optima of each instant, per subsystem.
    pub window_optima: Vec<Vec<f64>>,
    pub arrival_offsets: Vec<Vec<f64>>,
}

impl ObjectiveLedger {
    fn record(&mut self, optima: Vec<f64>, offsets: Vec<f64>) {
        if self.per_subsystem.is_empty() {
            self.per_subsystem = vec![0.0; optima.len()];
        }
        for (acc, v) in self.per_subsystem.iter_mut().zip(&optima) {
            *acc += v;
        }
        self.cumulative.push(self.per_subsystem.iter().sum());
        self.collective.push(optima.iter().zip(&offsets).map(|(a, b)| a + b).sum());
        self.window_optima.push(optima);
        self.arrival_offsets.push(offsets);
    }

    /// Per-instant `Φ*_k − Φ*_{k−1}` of the full-information values.
    pub fn increments(&self) -> Vec<f64> {
        self.collective.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

struct LocalOutcome {
    chain: Option<ArrivalCostState>,
    offset: f64,
    solution: LocalSolution,
}

/// Drives one run of a variant over incoming measurements.
#[derive(Clone)]
pub struct Coordinator {
    setup: Arc<EstimatorSetup>,
    selectors: Option<Selectors>,
    config: VariantConfig,
    ys: Vec<DVector<f64>>,
    /// Latest exchanged estimate of every instant (global vectors).
    latest: Vec<DVector<f64>>,
    chains: Vec<Option<ArrivalCostState>>,
    pub ledger: ObjectiveLedger,
    pub arrival_trace: Vec<ArrivalTrace>,
    /// Per instant, the chain state of every subsystem after that instant (kept when recording).
    pub chain_history: Vec<Vec<Option<ArrivalCostState>>>,
    pub last_solutions: Vec<LocalSolution>,
    /// `(k, i)` of every local solve that stopped at its iteration cap.
    pub unconverged: Vec<(usize, usize)>,
    record_chains: bool,
    parallel: bool,
    accept_unconverged: bool,
    injected: Option<Arc<Vec<DVector<f64>>>>,
}

impl Coordinator {
    pub fn new(setup: EstimatorSetup, config: VariantConfig) -> Result<Self> {
        config.validate()?;
        setup.validate()?;
        let selectors = match &setup.model {
            EstimationModel::Linear(m) => Some(m.selectors()),
            EstimationModel::Nonlinear(_) => {
                if config.variant == Variant::FieOracle {
                    return Err(Error::config("variant", "variant", "fie-oracle needs a linear model"));
                }
                None
            }
        };
        let n = setup.model.partition().n();
        Ok(Self {
            setup: Arc::new(setup),
            selectors,
            config,
            ys: vec![],
            latest: vec![],
            chains: vec![None; n],
            ledger: ObjectiveLedger::default(),
            arrival_trace: vec![],
            chain_history: vec![],
            last_solutions: vec![],
            unconverged: vec![],
            record_chains: false,
            parallel: true,
            accept_unconverged: false,
            injected: None,
        })
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Keep the best iterate of a nonlinear solve that hits its iteration cap instead of failing.
    pub fn with_unconverged_accepted(mut self, on: bool) -> Self {
        self.accept_unconverged = on;
        self
    }

    pub fn with_chain_recording(mut self, on: bool) -> Self {
        self.record_chains = on;
        self
    }

    /// Replace exchanged neighbor estimates by a fixed global history `x̃_0, x̃_1, …`.
    pub fn with_injected_neighbors(mut self, history: Vec<DVector<f64>>) -> Self {
        self.injected = Some(Arc::new(history));
        self
    }

    pub fn config(&self) -> &VariantConfig {
        &self.config
    }

    pub fn setup(&self) -> &EstimatorSetup {
        &self.setup
    }

    /// Instant the next call to [`advance_one_instant`](Self::advance_one_instant) processes.
    pub fn next_instant(&self) -> usize {
        self.ys.len()
    }

    pub fn chains(&self) -> &[Option<ArrivalCostState>] {
        &self.chains
    }

    /// Latest estimates of every past instant, `x̂_{j|min(k, j+N)}`.
    pub fn latest_estimates(&self) -> &[DVector<f64>] {
        &self.latest
    }

    fn local(&self, i: usize) -> Box<dyn LocalModel + '_> {
        match (&self.setup.model, &self.selectors) {
            (EstimationModel::Linear(m), Some(sel)) => Box::new(LinearLocal::new(m, sel, i)),
            (EstimationModel::Nonlinear(m), _) => Box::new(NonlinearLocal::new(m, i)),
            _ => unreachable!("linear models always carry selectors"),
        }
    }

    fn weights(&self, i: usize) -> LocalWeights {
        LocalWeights { q: self.setup.weights.q[i].clone(), r: block_diag(&self.setup.weights.r) }
    }

    /// Snapshot exchanged at the end of instant `k − 1`.
    pub fn snapshot(&self) -> Option<ExchangeSnapshot> {
        let k = self.ys.len();
        if k == 0 {
            return None;
        }
        let stamp = k - 1;
        let start = stamp.saturating_sub(self.config.horizon);
        let p = self.setup.model.partition();
        let estimates = (0..p.n())
            .map(|l| (start..=stamp).map(|j| self.latest[j].rows_range(p.state_range(l)).into_owned()).collect())
            .collect();
        Some(ExchangeSnapshot { stamp, start, estimates })
    }

    /// `x̃_j`: the initial guess at `j = 0`, otherwise the exchanged estimate.
    fn x_tilde(&self, snap: &ExchangeSnapshot, j: usize) -> DVector<f64> {
        if let Some(h) = &self.injected {
            return h[j].clone();
        }
        if j == 0 {
            self.setup.x_bar0.clone()
        } else {
            snap.global(j)
        }
    }

    fn x_tilde0(&self) -> DVector<f64> {
        match &self.injected {
            Some(h) => h[0].clone(),
            None => self.setup.x_bar0.clone(),
        }
    }

    fn own(&self, i: usize, v: &DVector<f64>) -> DVector<f64> {
        v.rows_range(self.setup.model.partition().state_range(i)).into_owned()
    }

    fn solve_window(
        &self,
        i: usize,
        local: &dyn LocalModel,
        window: &EstimationWindow,
        warm: Option<Vec<DVector<f64>>>,
    ) -> Result<LocalSolution> {
        let w = self.weights(i);
        let c = &self.setup.constraints[i];
        if local.is_linear() {
            solve_local_mhe_linear(window, local, &w, c)
        } else if self.accept_unconverged {
            gauss_newton_best_effort(window, local, &w, c, warm.as_deref()).map(|(s, _)| s)
        } else {
            solve_local_mhe_nonlinear(window, local, &w, c, warm.as_deref())
        }
    }

    fn step_subsystem(&self, i: usize, k: usize, snap: Option<&ExchangeSnapshot>) -> Result<LocalOutcome> {
        let local = self.local(i);
        let local = local.as_ref();
        let n_h = self.config.horizon;
        let w = self.weights(i);
        let x_bar0_i = self.own(i, &self.setup.x_bar0);
        if let Some(s) = snap {
            s.assert_causal(k)?;
        }

        if self.config.variant == Variant::FieOracle {
            let EstimationModel::Linear(model) = &self.setup.model else {
                return Err(Error::Model("fie-oracle needs a linear model".into()));
            };
            let xt: Vec<DVector<f64>> = match &self.injected {
                Some(h) => h[..k.max(1)].to_vec(),
                None => std::iter::once(self.setup.x_bar0.clone()).chain((1..k).map(|j| self.latest[j].clone())).collect(),
            };
            let xs = solve_fie_oracle(model, &self.ys[..=k], &self.setup.x_bar0, FieMode::Distributed(i), &xt)?;
            let window = EstimationWindow {
                k,
                start: 0,
                ys: self.ys[..=k].to_vec(),
                x_tilde: xt[..k].to_vec(),
                prior: Some(WindowPrior { center: x_bar0_i, weight: self.setup.weights.p0[i].clone() }),
                direct: Some(xt[0].clone()),
                rows: OutputRows::All,
            };
            let prob = WindowProblem::new(&window, local, &w)?;
            let z = crate::linalg::vstack_vec(&xs);
            let ev = prob.evaluate(&z)?;
            // only the trailing window is shared, so older exchanged estimates stay frozen as in the windowed run
            let start = k.saturating_sub(n_h);
            let keep = k + 1 - start;
            let tail = |v: Vec<DVector<f64>>, m: usize| v[v.len() - m..].to_vec();
            let solution = LocalSolution {
                start,
                objective: ev.objective(),
                x: tail(xs, keep),
                w: tail(ev.w, keep - 1),
                v_direct: ev.v_direct,
                v: tail(ev.v, keep - 1),
                kkt_residual: 0.0,
                iterations: 1,
                converged: true,
            };
            return Ok(LocalOutcome { chain: None, offset: 0.0, solution });
        }

        let rows = self.config.rows();
        let recursive = self.config.arrival_mode == ArrivalMode::Recursive;
        if k <= n_h {
            let xt: Vec<DVector<f64>> = match snap {
                Some(s) => (0..k).map(|j| self.x_tilde(s, j)).collect(),
                None => vec![],
            };
            let chain = if recursive && k == 0 {
                Some(arrival::init_arrival(local, &self.setup.weights.p0[i], &x_bar0_i, &self.ys[0], &self.x_tilde0(), &w.r)?)
            } else {
                self.chains[i].clone()
            };
            let window = EstimationWindow {
                k,
                start: 0,
                ys: self.ys[..=k].to_vec(),
                x_tilde: xt,
                prior: Some(WindowPrior { center: x_bar0_i.clone(), weight: self.setup.weights.p0[i].clone() }),
                direct: Some(self.x_tilde0()),
                rows,
            };
            let warm = self.warm_start(i, k, 0, local, snap)?;
            let solution = self.solve_window(i, local, &window, warm)?;
            return Ok(LocalOutcome { chain, offset: 0.0, solution });
        }

        let snap = snap.expect("k > 0 always has a snapshot");
        let start = k - n_h;
        let x_tilde: Vec<DVector<f64>> = (start..k).map(|j| self.x_tilde(snap, j)).collect();
        let prev = start - 1;
        let xt_prev = self.x_tilde(snap, prev);
        let own_prev = self.own(i, &snap.global(prev));
        let mut chain = None;
        let mut offset = 0.0;
        let (prior, direct) = match self.config.arrival_mode {
            ArrivalMode::Recursive => {
                let cur = self.chains[i]
                    .as_ref()
                    .ok_or_else(|| Error::Numerical("arrival chain missing".into()))?;
                debug_assert_eq!(cur.k, prev);
                let next = arrival::advance(cur, local, &self.ys[start], &xt_prev, &w.q, &w.r, Some(&own_prev))?;
                offset = match self.config.anchor {
                    ArrivalAnchor::Chain => next.offset,
                    ArrivalAnchor::Readout => cur.offset,
                };
                let out = match self.config.anchor {
                    ArrivalAnchor::Chain => (
                        Some(WindowPrior { center: next.x_breve.clone(), weight: next.p_breve.clone() }),
                        None,
                    ),
                    ArrivalAnchor::Readout => (
                        Some(WindowPrior {
                            center: next.x_bar.clone().expect("advance fills the read-out"),
                            weight: next.p_bar.clone().expect("advance fills the read-out"),
                        }),
                        Some(x_tilde[0].clone()),
                    ),
                };
                chain = Some(next);
                out
            }
            ArrivalMode::Constant => {
                let center = match self.config.constant_center {
                    ConstantCenter::Prediction => local.step(prev, &own_prev, &xt_prev)?.0,
                    ConstantCenter::InitialGuess => x_bar0_i.clone(),
                };
                (Some(WindowPrior { center, weight: self.setup.weights.p0[i].clone() }), Some(x_tilde[0].clone()))
            }
            ArrivalMode::None => (None, Some(x_tilde[0].clone())),
        };
        let window = EstimationWindow {
            k,
            start,
            ys: self.ys[start..=k].to_vec(),
            x_tilde,
            prior,
            direct,
            rows,
        };
        let warm = self.warm_start(i, k, start, local, Some(snap))?;
        let solution = self.solve_window(i, local, &window, warm)?;
        Ok(LocalOutcome { chain, offset, solution })
    }

    /// Previous estimates over `start..k` with the last one pushed through `f_i`.
    fn warm_start(
        &self,
        i: usize,
        k: usize,
        start: usize,
        local: &dyn LocalModel,
        snap: Option<&ExchangeSnapshot>,
    ) -> Result<Option<Vec<DVector<f64>>>> {
        if local.is_linear() {
            return Ok(None);
        }
        let Some(snap) = snap else {
            return Ok(Some(vec![self.own(i, &self.setup.x_bar0)]));
        };
        let mut xs: Vec<DVector<f64>> = (start..k).map(|j| self.own(i, &self.latest[j])).collect();
        let last = xs.last().cloned().unwrap_or_else(|| self.own(i, &self.setup.x_bar0));
        let next = local.step(k - 1, &last, &self.x_tilde(snap, k - 1))?.0;
        xs.push(next);
        let c = &self.setup.constraints[i];
        for x in xs.iter_mut() {
            for r in 0..x.len() {
                x[r] = x[r].clamp(c.x_lower[r], c.x_upper[r]);
            }
        }
        Ok(Some(xs))
    }

    /// Run one sampling instant; on error nothing is committed.
    pub fn advance_one_instant(&mut self, y_k: DVector<f64>) -> Result<DVector<f64>> {
        let p = self.setup.model.partition().clone();
        if y_k.len() != p.ny() {
            return Err(Error::dim(format!("measurement has length {}, expected {}", y_k.len(), p.ny())));
        }
        let k = self.ys.len();
        let snap = self.snapshot();
        self.ys.push(y_k);
        let results: Vec<Result<LocalOutcome>> = if self.parallel {
            (0..p.n()).into_par_iter().map(|i| self.step_subsystem(i, k, snap.as_ref())).collect()
        } else {
            (0..p.n()).map(|i| self.step_subsystem(i, k, snap.as_ref())).collect()
        };
        let mut outcomes = Vec::with_capacity(p.n());
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    self.ys.pop();
                    return Err(Error::Subsystem { subsystem: i, instant: k, source: Box::new(e) });
                }
            }
        }

        // commit
        self.latest.push(DVector::zeros(p.nx()));
        let mut estimate = DVector::zeros(p.nx());
        let mut optima = Vec::with_capacity(p.n());
        let mut offsets = Vec::with_capacity(p.n());
        for (i, o) in outcomes.iter_mut().enumerate() {
            let r = p.state_range(i);
            for (off, x) in o.solution.x.iter().enumerate() {
                self.latest[o.solution.start + off].rows_range_mut(r.clone()).copy_from(x);
            }
            estimate.rows_range_mut(r).copy_from(o.solution.last());
            optima.push(o.solution.objective);
            offsets.push(o.offset);
            if !o.solution.converged {
                self.unconverged.push((k, i));
            }
            if let Some(c) = o.chain.take() {
                if let Some(t) = c.trace() {
                    self.arrival_trace.push(t);
                }
                self.chains[i] = Some(c);
            }
        }
        self.ledger.record(optima, offsets);
        if self.record_chains {
            self.chain_history.push(self.chains.clone());
        }
        self.last_solutions = outcomes.into_iter().map(|o| o.solution).collect();
        Ok(estimate)
    }
}

/// Estimates `x̂_{k|k}` for every completed instant, with the failure that stopped the run, if any.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub variant: Variant,
    pub estimates: Vec<DVector<f64>>,
    pub failure: Option<Error>,
}

/// Feed measurements one instant at a time. Stops at the first failure and keeps what was computed.
pub fn run_horizon(coordinator: &mut Coordinator, measurements: &[DVector<f64>]) -> EstimateRecord {
    let mut estimates = Vec::with_capacity(measurements.len());
    let mut failure = None;
    for y in measurements {
        match coordinator.advance_one_instant(y.clone()) {
            Ok(x) => estimates.push(x),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    EstimateRecord { variant: coordinator.config.variant, estimates, failure }
}

/// Write `(k, subsystem, state_index, estimate, truth, error)` rows; truth columns stay empty when absent.
pub fn write_estimates_csv<W: std::io::Write>(
    out: W,
    partition: &Partition,
    estimates: &[DVector<f64>],
    truth: Option<&[DVector<f64>]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "subsystem", "state_index", "estimate", "truth", "error"])?;
    for (k, x) in estimates.iter().enumerate() {
        for i in 0..partition.n() {
            for (s, idx) in partition.state_range(i).enumerate() {
                let est = x[idx];
                let (t, e) = match truth.and_then(|t| t.get(k)) {
                    Some(tv) => (format!("{:e}", tv[idx]), format!("{:e}", est - tv[idx])),
                    None => (String::new(), String::new()),
                };
                w.write_record([k.to_string(), (i + 1).to_string(), (s + 1).to_string(), format!("{est:e}"), t, e])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
