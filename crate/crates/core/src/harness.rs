//! Experiment runner: configs, truth simulation, variant runs, RMSE reports and artifacts.
//!
//! Estimates are written in physical units. RMSE is taken in the scaled coordinates of the
//! plant (unit scaling for linear plants, `|x_0|` of the shipped initial state for the
//! reactor–separator).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{run_horizon, write_estimates_csv, Coordinator, EstimationModel, EstimatorSetup, Variant, VariantConfig, Weights};
use crate::error::{Error, Result};
use crate::estimator::ConstraintSet;
use crate::model::{load_linear_model, NonlinearModel, Partition, PartitionedLinearModel};
use crate::plant::{
    reactor_estimation_model, simulate_linear, simulate_reactor, write_trajectory_csv, NoiseSpec, ReactorSeparatorConfig, ScalingMap,
    Trajectory, VESSELS,
};
use crate::stability::{assumption1_margins, build_collective, error_matrix_rho, OutputCoupling, StabilityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantSpec {
    /// Model file; relative paths resolve against the config file's directory.
    Linear { model: PathBuf },
    /// Parameter file, or the shipped parameter set when absent.
    ReactorSeparator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parameters: Option<PathBuf>,
    },
}

/// Estimator weights `q·I`, `r·I`, `p0·I`, in scaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub q: f64,
    pub r: f64,
    pub p0: f64,
}

/// Noise standard deviations in scaled coordinates; the seed comes from the seed list.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevels {
    pub process_std: f64,
    pub measurement_std: f64,
}

/// State bounds for the estimators, in physical units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintSpec {
    #[default]
    None,
    /// Fractions in `[0, 1]` and nonnegative temperatures on every window state (reactor only).
    Physical,
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "yes")]
        all_window: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub horizon: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// True initial state; the reactor default is the shipped initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    /// Initial guess `x̄_0`; give this or `guess_factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<Vec<f64>>,
    /// `x̄_0 = guess_factor · x_0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess_factor: Option<f64>,
    pub output_dir: PathBuf,
    /// Keep the best iterate when a nonlinear local solve hits its iteration cap.
    #[serde(default)]
    pub accept_unconverged: bool,
    #[serde(default)]
    pub output_coupling: OutputCoupling,
    pub plant: PlantSpec,
    /// Linear plants default to the weights in the model file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
    #[serde(default)]
    pub noise: NoiseLevels,
    #[serde(default)]
    pub constraints: ConstraintSpec,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("<root>", &span_key(s, &e), e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("<file>", &path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", "<serialize>", e.to_string()))
    }

    /// Checks that do not need the plant; dimension checks happen in [`Experiment::prepare`].
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("<root>", "horizon", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("<root>", "steps", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("<root>", "seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("<root>", "variants", "at least one variant is required"));
        }
        match (&self.initial_guess, self.guess_factor) {
            (Some(_), Some(_)) => return Err(Error::config("<root>", "guess_factor", "give either initial_guess or guess_factor, not both")),
            (None, None) => return Err(Error::config("<root>", "initial_guess", "an initial guess or guess_factor is required")),
            (None, Some(f)) if !f.is_finite() => return Err(Error::config("<root>", "guess_factor", "must be finite")),
            _ => {}
        }
        if let Some(w) = &self.weights {
            if [w.q, w.r, w.p0].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config("weights", "q", "weights must be positive and finite"));
            }
        }
        NoiseSpec { process_std: self.noise.process_std, measurement_std: self.noise.measurement_std, seed: 0 }.validate()?;
        Ok(())
    }
}

/// Best-effort name of the key a TOML error points at.
fn span_key(src: &str, e: &toml::de::Error) -> String {
    e.span()
        .and_then(|r| src.get(r))
        .map(|s| s.split('=').next().unwrap_or(s).trim().to_string())
        .filter(|s| !s.is_empty() && s.len() < 64)
        .unwrap_or_else(|| "<syntax>".to_string())
}

#[derive(Debug, Clone)]
enum Plant {
    Linear(PartitionedLinearModel),
    Reactor { cfg: ReactorSeparatorConfig, model: NonlinearModel },
}

/// A validated config with its plant loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    plant: Plant,
    /// True initial state, physical units.
    pub x0: DVector<f64>,
    /// Initial guess, physical units.
    pub x_bar0: DVector<f64>,
    pub scaling: ScalingMap,
    pub sample_time: f64,
    constraints: Vec<ConstraintSet>,
}

impl Experiment {
    /// Load the plant and check every dimension. `base` anchors relative paths.
    pub fn prepare(config: ExperimentConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let plant = match &config.plant {
            PlantSpec::Linear { model } => Plant::Linear(load_linear_model(&resolve(model))?),
            PlantSpec::ReactorSeparator { parameters } => {
                let cfg = match parameters {
                    Some(p) => ReactorSeparatorConfig::load(&resolve(p))?,
                    None => ReactorSeparatorConfig::shipped(),
                };
                let scaling = ScalingMap::from_reference(&cfg.initial_state())?;
                let model = reactor_estimation_model(&cfg, &scaling)?;
                Plant::Reactor { cfg, model }
            }
        };
        let nx = match &plant {
            Plant::Linear(m) => m.partition().nx(),
            Plant::Reactor { .. } => 3 * VESSELS,
        };
        let vector = |key: &str, v: &[f64]| {
            if v.len() != nx {
                return Err(Error::config("<root>", key, format!("expected {nx} entries, got {}", v.len())));
            }
            Ok(DVector::from_column_slice(v))
        };
        let x0 = match (&config.initial_state, &plant) {
            (Some(v), _) => vector("initial_state", v)?,
            (None, Plant::Reactor { cfg, .. }) => cfg.initial_state(),
            (None, Plant::Linear(_)) => return Err(Error::config("<root>", "initial_state", "required for linear plants")),
        };
        let x_bar0 = match (&config.initial_guess, config.guess_factor) {
            (Some(v), _) => vector("initial_guess", v)?,
            (None, Some(f)) => &x0 * f,
            (None, None) => unreachable!("validated"),
        };
        let (scaling, sample_time) = match &plant {
            Plant::Linear(_) => (ScalingMap::unit(nx), 1.0),
            Plant::Reactor { cfg, .. } => (ScalingMap::from_reference(&cfg.initial_state())?, cfg.sample_time),
        };
        if matches!(plant, Plant::Reactor { .. }) {
            if config.weights.is_none() {
                return Err(Error::config("<root>", "weights", "required for the reactor-separator plant"));
            }
            if config.variants.contains(&Variant::FieOracle) {
                return Err(Error::config("<root>", "variants", "fie-oracle needs a linear plant"));
            }
        }
        let partition = match &plant {
            Plant::Linear(m) => m.partition().clone(),
            Plant::Reactor { model, .. } => model.partition().clone(),
        };
        let constraints = build_constraints(&config.constraints, &plant, &partition, &scaling)?;
        Ok(Self { config, plant, x0, x_bar0, scaling, sample_time, constraints })
    }

    pub fn partition(&self) -> &Partition {
        match &self.plant {
            Plant::Linear(m) => m.partition(),
            Plant::Reactor { model, .. } => model.partition(),
        }
    }

    pub fn linear_model(&self) -> Option<&PartitionedLinearModel> {
        match &self.plant {
            Plant::Linear(m) => Some(m),
            Plant::Reactor { .. } => None,
        }
    }

    /// Human-readable echo of the resolved setup.
    pub fn describe(&self) -> String {
        let c = &self.config;
        let list = |v: &DVector<f64>| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let plant = match &c.plant {
            PlantSpec::Linear { model } => format!("linear ({})", model.display()),
            PlantSpec::ReactorSeparator { .. } => "reactor-separator".to_string(),
        };
        let _ = writeln!(s, "plant = {plant}");
        let _ = writeln!(s, "variants = {}", c.variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(", "));
        let _ = writeln!(s, "horizon N = {}", c.horizon);
        let _ = writeln!(s, "steps T = {}", c.steps);
        let _ = writeln!(s, "seeds = {:?}", c.seeds);
        let _ = writeln!(s, "x0 = [{}]", list(&self.x0));
        match c.guess_factor {
            Some(f) => {
                let _ = writeln!(s, "x_bar0 = {f} x x0 = [{}]", list(&self.x_bar0));
            }
            None => {
                let _ = writeln!(s, "x_bar0 = [{}]", list(&self.x_bar0));
            }
        }
        match &c.weights {
            Some(w) => {
                let _ = writeln!(s, "weights: Q = {} I, R = {} I, P0 = {} I", w.q, w.r, w.p0);
            }
            None => {
                let _ = writeln!(s, "weights: from model file");
            }
        }
        let _ = writeln!(s, "noise: process std = {}, measurement std = {}", c.noise.process_std, c.noise.measurement_std);
        s
    }

    /// Truth trajectory for one seed, physical units.
    pub fn simulate(&self, seed: u64) -> Result<Trajectory> {
        let noise = NoiseSpec { process_std: self.config.noise.process_std, measurement_std: self.config.noise.measurement_std, seed };
        match &self.plant {
            Plant::Linear(m) => simulate_linear(m, &self.x0, self.config.steps, &noise),
            Plant::Reactor { cfg, .. } => simulate_reactor(cfg, &self.x0, self.config.steps, &noise, &self.scaling),
        }
    }

    /// Measurements in the coordinates the estimators work in.
    pub fn estimator_measurements(&self, truth: &Trajectory) -> Vec<DVector<f64>> {
        match &self.plant {
            Plant::Linear(_) => truth.outputs.clone(),
            Plant::Reactor { .. } => {
                let f = self.scaling.factors();
                truth.outputs.iter().map(|y| DVector::from_fn(VESSELS, |v, _| y[v] / f[3 * v + 2])).collect()
            }
        }
    }

    pub fn setup(&self) -> EstimatorSetup {
        let p = self.partition();
        let (model, default_weights) = match &self.plant {
            Plant::Linear(m) => (EstimationModel::Linear(m.clone()), Weights::from_linear(m)),
            Plant::Reactor { model, .. } => (EstimationModel::Nonlinear(model.clone()), Weights::scaled_identity(p, 1.0, 1.0, 1.0)),
        };
        let weights = match &self.config.weights {
            Some(w) => Weights::scaled_identity(p, w.q, w.r, w.p0),
            None => default_weights,
        };
        EstimatorSetup { model, weights, x_bar0: self.scaling.apply(&self.x_bar0), constraints: self.constraints.clone() }
    }

    pub fn coordinator(&self, variant: Variant) -> Result<Coordinator> {
        Ok(Coordinator::new(self.setup(), VariantConfig::new(variant, self.config.horizon))?.with_unconverged_accepted(self.config.accept_unconverged))
    }

    /// Run one variant on one truth trajectory.
    pub fn run_variant(&self, seed: u64, variant: Variant, truth: &Trajectory) -> Result<RunOutcome> {
        let ys = self.estimator_measurements(truth);
        let mut co = self.coordinator(variant)?;
        let rec = run_horizon(&mut co, &ys);
        let estimates: Vec<DVector<f64>> = rec.estimates.iter().map(|e| self.scaling.invert(e)).collect();
        let done = estimates.len();
        let rmse = if done == 0 { None } else { Some(compute_rmse(&truth.states[..done], &estimates, &self.scaling)?) };
        let errors = estimates.iter().zip(&truth.states).map(|(e, t)| self.scaling.apply(e) - self.scaling.apply(t)).collect();
        Ok(RunOutcome {
            seed,
            variant,
            rmse,
            instants: done,
            failure: rec.failure.map(|e| format!("instant {done}: {e}")),
            unconverged: co.unconverged.len(),
            estimates,
            errors,
        })
    }

    /// Simulate every seed and run every variant, seeds in parallel.
    pub fn execute(&self) -> Result<Vec<SeedResult>> {
        self.config
            .seeds
            .par_iter()
            .map(|&seed| {
                let truth = self.simulate(seed)?;
                let runs = self.config.variants.iter().map(|&v| self.run_variant(seed, v, &truth)).collect::<Result<Vec<_>>>()?;
                Ok(SeedResult { seed, truth, runs })
            })
            .collect()
    }

    /// Spectral condition and per-instant Assumption-1 margins of the linear plant.
    pub fn stability(&self) -> Result<StabilityReport> {
        let m = self.linear_model().ok_or_else(|| Error::config("plant", "kind", "stability analysis needs a linear plant"))?;
        analyze_stability(m, self.config.horizon, self.config.steps, self.config.output_coupling)
    }
}

fn build_constraints(spec: &ConstraintSpec, plant: &Plant, p: &Partition, scaling: &ScalingMap) -> Result<Vec<ConstraintSet>> {
    let (lower, upper, all) = match spec {
        ConstraintSpec::None => return Ok(p.state_dims().iter().map(|&d| ConstraintSet::unbounded(d)).collect()),
        ConstraintSpec::Physical => {
            if !matches!(plant, Plant::Reactor { .. }) {
                return Err(Error::config("constraints", "kind", "physical bounds are defined for the reactor-separator only"));
            }
            let lo = DVector::zeros(3 * VESSELS);
            let hi = DVector::from_fn(3 * VESSELS, |j, _| if j % 3 == 2 { f64::INFINITY } else { 1.0 });
            (lo, hi, true)
        }
        ConstraintSpec::Box { lower, upper, all_window } => {
            if lower.len() != p.nx() || upper.len() != p.nx() {
                return Err(Error::config("constraints", "lower", format!("bounds need {} entries", p.nx())));
            }
            (DVector::from_column_slice(lower), DVector::from_column_slice(upper), *all_window)
        }
    };
    let (lo, hi) = (scaling.apply(&lower), scaling.apply(&upper));
    (0..p.n())
        .map(|i| {
            let r = p.state_range(i);
            ConstraintSet::state_box(lo.rows(r.start, r.len()).into_owned(), hi.rows(r.start, r.len()).into_owned(), all)
                .map_err(|e| Error::config("constraints", "lower", e.to_string()))
        })
        .collect()
}

/// Collective spectral radius plus Assumption-1 margins along the arrival chains of a
/// `steps`-instant run of the proposed variant. The chains of a linear model do not depend
/// on the data, so the run uses zero measurements.
pub fn analyze_stability(model: &PartitionedLinearModel, horizon: usize, steps: usize, output: OutputCoupling) -> Result<StabilityReport> {
    let sel = model.selectors();
    let cm = build_collective(model, &sel, horizon)?;
    let (rho, _) = error_matrix_rho(&cm)?;
    let p = model.partition();
    let setup = EstimatorSetup::linear(model.clone(), DVector::zeros(p.nx()));
    let mut co = Coordinator::new(setup, VariantConfig::new(Variant::Proposed, horizon))?.with_chain_recording(true);
    for _ in 0..steps {
        co.advance_one_instant(DVector::zeros(p.ny()))?;
    }
    let margins = assumption1_margins(model, horizon, &co.chain_history, output)?;
    Ok(StabilityReport { horizon, rho, margins })
}

/// `sqrt(mean over instants and states of the squared scaled error)`.
pub fn compute_rmse(truth: &[DVector<f64>], estimates: &[DVector<f64>], scaling: &ScalingMap) -> Result<f64> {
    if truth.len() != estimates.len() {
        return Err(Error::dim(format!("{} truth instants against {} estimates", truth.len(), estimates.len())));
    }
    if truth.is_empty() {
        return Err(Error::dim("no instants to compare"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (t, e) in truth.iter().zip(estimates) {
        if t.len() != scaling.len() || e.len() != scaling.len() {
            return Err(Error::dim(format!("state length must be {}", scaling.len())));
        }
        acc += (scaling.apply(e) - scaling.apply(t)).norm_squared();
        count += t.len();
    }
    Ok((acc / count as f64).sqrt())
}

/// One variant on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub variant: Variant,
    /// Over the completed instants; `None` when none completed.
    pub rmse: Option<f64>,
    pub instants: usize,
    /// What stopped the run early, if anything.
    pub failure: Option<String>,
    /// Local solves accepted at their iteration cap.
    pub unconverged: usize,
    /// `x̂_{k|k}` in physical units.
    pub estimates: Vec<DVector<f64>>,
    /// Scaled estimation errors per instant.
    pub errors: Vec<DVector<f64>>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub truth: Trajectory,
    pub runs: Vec<RunOutcome>,
}

/// Per-variant RMSEs across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub runs: Vec<RunOutcome>,
}

impl RmseReport {
    pub fn from_results(variants: &[Variant], results: &[SeedResult]) -> Self {
        Self {
            seeds: results.iter().map(|r| r.seed).collect(),
            variants: variants.to_vec(),
            runs: results.iter().flat_map(|r| r.runs.iter().cloned()).collect(),
        }
    }

    pub fn get(&self, seed: u64, variant: Variant) -> Option<&RunOutcome> {
        self.runs.iter().find(|r| r.seed == seed && r.variant == variant)
    }

    /// RMSE of a completed run.
    pub fn rmse(&self, seed: u64, variant: Variant) -> Option<f64> {
        self.get(seed, variant).filter(|r| r.completed()).and_then(|r| r.rmse)
    }

    /// Median over completed runs.
    pub fn median(&self, variant: Variant) -> Option<f64> {
        let mut v: Vec<f64> = self.seeds.iter().filter_map(|&s| self.rmse(s, variant)).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    /// Seeds on which `a` completed with a lower RMSE than a completed run of `b`.
    pub fn wins(&self, a: Variant, b: Variant) -> usize {
        self.seeds
            .iter()
            .filter(|&&s| matches!((self.rmse(s, a), self.rmse(s, b)), (Some(x), Some(y)) if x < y))
            .count()
    }

    /// `seed,variant,rmse,instants,status,unconverged,message`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "variant", "rmse", "instants", "status", "unconverged", "message"])?;
        for r in &self.runs {
            w.write_record([
                r.seed.to_string(),
                r.variant.name().to_string(),
                r.rmse.map_or(String::new(), |x| format!("{x:e}")),
                r.instants.to_string(),
                if r.completed() { "ok" } else { "failed" }.to_string(),
                r.unconverged.to_string(),
                r.failure.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `variant,median,completed,seed_<s>…`; failed runs leave their cell empty.
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["variant".to_string(), "median".to_string(), "completed".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        w.write_record(&header)?;
        for &v in &self.variants {
            let mut row = vec![
                v.name().to_string(),
                self.median(v).map_or(String::new(), |x| format!("{x:e}")),
                self.seeds.iter().filter(|&&s| self.rmse(s, v).is_some()).count().to_string(),
            ];
            row.extend(self.seeds.iter().map(|&s| self.rmse(s, v).map_or(String::new(), |x| format!("{x:e}"))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text comparison table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}{:>12}", "variant", "median");
        for seed in &self.seeds {
            let _ = write!(s, "{:>12}", format!("seed {seed}"));
        }
        s.push('\n');
        let cell = |x: Option<f64>| x.map_or("failed".to_string(), |v| format!("{v:.4}"));
        for &v in &self.variants {
            let _ = write!(s, "{:<12}{:>12}", v.name(), cell(self.median(v)));
            for &seed in &self.seeds {
                let _ = write!(s, "{:>12}", cell(self.rmse(seed, v)));
            }
            s.push('\n');
        }
        for r in self.runs.iter().filter(|r| !r.completed()) {
            let _ = writeln!(s, "note: {} seed {} stopped at {}", r.variant.name(), r.seed, r.failure.as_deref().unwrap_or(""));
        }
        s
    }
}

/// Run a prepared experiment and write its artifacts under the configured output directory:
///
/// * `config.toml`: the resolved config,
/// * `seed-<s>/truth.csv` and `seed-<s>/<variant>.csv`,
/// * `rmse.csv` and `summary.csv`,
/// * `stability.txt` for linear plants.
pub fn run_experiment(exp: &Experiment) -> Result<RmseReport> {
    let results = exp.execute()?;
    let report = RmseReport::from_results(&exp.config.variants, &results);
    let dir = &exp.config.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), exp.config.to_toml_string()?)?;
    for r in &results {
        let sub = dir.join(format!("seed-{}", r.seed));
        fs::create_dir_all(&sub)?;
        write_trajectory_csv(fs::File::create(sub.join("truth.csv"))?, exp.sample_time, &r.truth)?;
        for run in &r.runs {
            let f = fs::File::create(sub.join(format!("{}.csv", run.variant.name())))?;
            write_estimates_csv(f, exp.partition(), &run.estimates, Some(&r.truth.states))?;
        }
    }
    report.write_csv(fs::File::create(dir.join("rmse.csv"))?)?;
    report.write_summary_csv(fs::File::create(dir.join("summary.csv"))?)?;
    if exp.linear_model().is_some() {
        fs::write(dir.join("stability.txt"), exp.stability()?.to_text())?;
    }
    Ok(report)
}
