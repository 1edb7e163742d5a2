use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::linear::{NoiseSpec, Trajectory};
use super::scaling::ScalingMap;
use crate::error::{Error, Result};
use crate::model::{NonlinearModel, Partition, SubsystemDynamics};

/// Number of vessels; each carries `(x_A, x_B, T)`.
pub const VESSELS: usize = 3;

/// Vessel whose outlet feeds vessel `v` (recycle into the first reactor).
const UPSTREAM: [usize; VESSELS] = [2, 0, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flows {
    /// Fresh feeds into the two reactors.
    pub feed: [f64; 2],
    pub recycle: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vessels {
    pub volume: [f64; 3],
    pub feed_temperature: [f64; 2],
    pub feed_fraction_a: [f64; 2],
    pub feed_fraction_b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Kinetics {
    /// For A → B and B → C.
    pub pre_exponential: [f64; 2],
    pub activation_energy: [f64; 2],
    pub gas_constant: f64,
    /// Per unit mass, so `ΔH r x / c_p` is a temperature rate.
    pub reaction_enthalpy: [f64; 2],
    pub heat_capacity: f64,
    pub density: f64,
    /// Heats of vaporization of A, B, C, per unit mass.
    pub latent_heat: [f64; 3],
    /// Relative volatilities of A, B, C in the separator.
    pub relative_volatility: [f64; 3],
}

/// `Q_v(t) = base_v + amplitude_v · sin(frequency · π · t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatProfile {
    pub base: [f64; 3],
    pub amplitude: [f64; 3],
    pub frequency: f64,
}

impl HeatProfile {
    pub fn at(&self, vessel: usize, t: f64) -> f64 {
        self.base[vessel] + self.amplitude[vessel] * (self.frequency * std::f64::consts::PI * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub state: [f64; 9],
}

/// Parameters of the two-reactor, one-separator process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactorSeparatorConfig {
    pub sample_time: f64,
    pub substeps: usize,
    pub flows: Flows,
    pub vessels: Vessels,
    pub kinetics: Kinetics,
    pub heat: HeatProfile,
    pub initial: Initial,
}

const SHIPPED: &str = include_str!("../../data/reactor_separator.toml");

impl ReactorSeparatorConfig {
    /// The parameter set shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED).expect("shipped reactor parameters are valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::config("reactor", "-", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |section: &str, key: &str, vals: &[f64]| -> Result<()> {
            if vals.iter().all(|v| v.is_finite() && *v > 0.0) {
                Ok(())
            } else {
                Err(Error::config(section, key, "must be finite and strictly positive"))
            }
        };
        positive("reactor", "sample_time", &[self.sample_time])?;
        if self.substeps == 0 {
            return Err(Error::config("reactor", "substeps", "must be at least 1"));
        }
        positive("flows", "feed", &self.flows.feed)?;
        positive("flows", "recycle", &[self.flows.recycle])?;
        positive("flows", "product", &[self.flows.product])?;
        positive("vessels", "volume", &self.vessels.volume)?;
        positive("vessels", "feed_temperature", &self.vessels.feed_temperature)?;
        for (key, f) in [("feed_fraction_a", &self.vessels.feed_fraction_a), ("feed_fraction_b", &self.vessels.feed_fraction_b)] {
            if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("vessels", key, "fractions must lie in [0, 1]"));
            }
        }
        let k = &self.kinetics;
        positive("kinetics", "pre_exponential", &k.pre_exponential)?;
        positive("kinetics", "activation_energy", &k.activation_energy)?;
        positive("kinetics", "gas_constant", &[k.gas_constant])?;
        positive("kinetics", "heat_capacity", &[k.heat_capacity])?;
        positive("kinetics", "density", &[k.density])?;
        positive("kinetics", "latent_heat", &k.latent_heat)?;
        positive("kinetics", "relative_volatility", &k.relative_volatility)?;
        if k.reaction_enthalpy.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("kinetics", "reaction_enthalpy", "must be finite"));
        }
        positive("heat", "frequency", &[self.heat.frequency])?;
        if self.heat.base.iter().chain(&self.heat.amplitude).any(|v| !v.is_finite()) {
            return Err(Error::config("heat", "base", "heat profile must be finite"));
        }
        if self.initial.state.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("initial", "state", "must be finite"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.initial.state)
    }

    fn rate(&self, reaction: usize, t: f64) -> f64 {
        let k = &self.kinetics;
        k.pre_exponential[reaction] * (-k.activation_energy[reaction] / (k.gas_constant * t)).exp()
    }

    /// Recycle/vapor composition leaving the separator with liquid fractions `(x_A, x_B)`.
    fn vapor(&self, xa: f64, xb: f64) -> [f64; 3] {
        let a = &self.kinetics.relative_volatility;
        let xc = 1.0 - xa - xb;
        let den = a[0] * xa + a[1] * xb + a[2] * xc;
        [a[0] * xa / den, a[1] * xb / den, a[2] * xc / den]
    }
}

/// Time derivative of vessel `v` given its own state and that of its upstream vessel.
pub fn vessel_derivative(cfg: &ReactorSeparatorConfig, v: usize, own: &Vector3<f64>, upstream: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let f = &cfg.flows;
    let k = &cfg.kinetics;
    let vol = cfg.vessels.volume[v];
    let heat = cfg.heat.at(v, t) / (k.density * k.heat_capacity * vol);
    let (xa, xb, temp) = (own[0], own[1], own[2]);
    match v {
        0 | 1 => {
            // reactor: fresh feed plus the upstream stream (recycle vapor for the first one)
            let (inflow, ua, ub, ut) = if v == 0 {
                let y = cfg.vapor(upstream[0], upstream[1]);
                (f.recycle, y[0], y[1], upstream[2])
            } else {
                (f.feed[0] + f.recycle, upstream[0], upstream[1], upstream[2])
            };
            let (r1, r2) = (cfg.rate(0, temp), cfg.rate(1, temp));
            let ff = f.feed[v] / vol;
            let fu = inflow / vol;
            let fa = cfg.vessels.feed_fraction_a[v];
            let fb = cfg.vessels.feed_fraction_b[v];
            let tf = cfg.vessels.feed_temperature[v];
            let rxn = (k.reaction_enthalpy[0] * r1 * xa + k.reaction_enthalpy[1] * r2 * xb) / k.heat_capacity;
            Vector3::new(
                ff * (fa - xa) + fu * (ua - xa) - r1 * xa,
                ff * (fb - xb) + fu * (ub - xb) + r1 * xa - r2 * xb,
                ff * (tf - temp) + fu * (ut - temp) - rxn + heat,
            )
        }
        _ => {
            let inflow = (f.feed[0] + f.recycle + f.feed[1]) / vol;
            let out = (f.recycle + f.product) / vol;
            let y = cfg.vapor(xa, xb);
            Vector3::new(
                inflow * (upstream[0] - xa) - out * (y[0] - xa),
                inflow * (upstream[1] - xb) - out * (y[1] - xb),
                inflow * (upstream[2] - temp) + heat
                    - out * (y[0] * k.latent_heat[0] + y[1] * k.latent_heat[1] + y[2] * k.latent_heat[2]) / k.heat_capacity,
            )
        }
    }
}

fn vessel_of(x: &DVector<f64>, v: usize) -> Vector3<f64> {
    Vector3::new(x[3 * v], x[3 * v + 1], x[3 * v + 2])
}

fn plant_rhs(cfg: &ReactorSeparatorConfig, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let mut d = DVector::zeros(3 * VESSELS);
    for v in 0..VESSELS {
        let dv = vessel_derivative(cfg, v, &vessel_of(x, v), &vessel_of(x, UPSTREAM[v]), t);
        if dv.iter().any(|e| !e.is_finite()) {
            return Err(Error::Integration { vessel: v + 1, context: format!("non-finite derivative at t = {t}") });
        }
        d.rows_mut(3 * v, 3).copy_from(&dv);
    }
    Ok(d)
}

/// Advance the 9-state process by one sampling period from time `t` (h) with fixed-step RK4.
pub fn step_reactor_separator(cfg: &ReactorSeparatorConfig, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    step_with_substeps(cfg, x, t, cfg.substeps)
}

pub(crate) fn step_with_substeps(cfg: &ReactorSeparatorConfig, x: &DVector<f64>, t: f64, substeps: usize) -> Result<DVector<f64>> {
    if x.len() != 3 * VESSELS {
        return Err(Error::dim(format!("reactor state has length {}, expected 9", x.len())));
    }
    let h = cfg.sample_time / substeps as f64;
    let mut x = x.clone();
    for s in 0..substeps {
        let ts = t + s as f64 * h;
        let k1 = plant_rhs(cfg, &x, ts)?;
        let k2 = plant_rhs(cfg, &(&x + &k1 * (h / 2.0)), ts + h / 2.0)?;
        let k3 = plant_rhs(cfg, &(&x + &k2 * (h / 2.0)), ts + h / 2.0)?;
        let k4 = plant_rhs(cfg, &(&x + &k3 * h), ts + h)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x)
}

/// One sampling period of vessel `v` alone, its upstream vessel held at `upstream`.
pub fn vessel_step(cfg: &ReactorSeparatorConfig, v: usize, own: &Vector3<f64>, upstream: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let h = cfg.sample_time / cfg.substeps as f64;
    let mut x = *own;
    for s in 0..cfg.substeps {
        let ts = t + s as f64 * h;
        let k1 = vessel_derivative(cfg, v, &x, upstream, ts);
        let k2 = vessel_derivative(cfg, v, &(x + k1 * (h / 2.0)), upstream, ts + h / 2.0);
        let k3 = vessel_derivative(cfg, v, &(x + k2 * (h / 2.0)), upstream, ts + h / 2.0);
        let k4 = vessel_derivative(cfg, v, &(x + k3 * h), upstream, ts + h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Truth trajectory; noise is drawn in scaled coordinates and mapped back.
///
/// `outputs[k]` holds the three measured temperatures in physical units.
pub fn simulate_reactor(
    cfg: &ReactorSeparatorConfig,
    x0: &DVector<f64>,
    steps: usize,
    noise: &NoiseSpec,
    scaling: &ScalingMap,
) -> Result<Trajectory> {
    if x0.len() != 3 * VESSELS || scaling.len() != 3 * VESSELS {
        return Err(Error::dim("reactor state and scaling must have 9 entries"));
    }
    let (mut w, mut v) = noise.samplers()?;
    let t_scale = DVector::from_fn(VESSELS, |v, _| scaling.factors()[3 * v + 2]);
    let mut states = Vec::with_capacity(steps);
    let mut outputs = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for k in 0..steps {
        let temps = DVector::from_fn(VESSELS, |v, _| x[3 * v + 2]);
        outputs.push(temps + v.draw(VESSELS).component_mul(&t_scale));
        let next = step_reactor_separator(cfg, &x, k as f64 * cfg.sample_time)? + scaling.invert(&w.draw(3 * VESSELS));
        states.push(std::mem::replace(&mut x, next));
    }
    Ok(Trajectory { states, outputs })
}

/// One vessel as an estimation subsystem, in scaled coordinates.
///
/// The upstream vessel is held at its exchanged estimate over the sampling period.
#[derive(Debug, Clone)]
pub struct ReactorVessel {
    cfg: Arc<ReactorSeparatorConfig>,
    vessel: usize,
    own_scale: Vector3<f64>,
    upstream_scale: Vector3<f64>,
}

impl ReactorVessel {
    pub fn new(cfg: Arc<ReactorSeparatorConfig>, vessel: usize, scaling: &ScalingMap) -> Result<Self> {
        if vessel >= VESSELS || scaling.len() != 3 * VESSELS {
            return Err(Error::dim("vessel index or scaling out of range"));
        }
        let f = scaling.factors();
        let own_scale = vessel_of(f, vessel);
        let upstream_scale = vessel_of(f, UPSTREAM[vessel]);
        Ok(Self { cfg, vessel, own_scale, upstream_scale })
    }
}

impl SubsystemDynamics for ReactorVessel {
    fn state_dim(&self) -> usize {
        3
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn step(&self, k: usize, own: &DVector<f64>, neighbors: &[DVector<f64>]) -> DVector<f64> {
        let x = Vector3::new(own[0], own[1], own[2]).component_mul(&self.own_scale);
        let u = &neighbors[0];
        let u = Vector3::new(u[0], u[1], u[2]).component_mul(&self.upstream_scale);
        let next = vessel_step(&self.cfg, self.vessel, &x, &u, k as f64 * self.cfg.sample_time);
        DVector::from_column_slice(next.component_div(&self.own_scale).as_slice())
    }

    fn output(&self, own: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, own[2])
    }

    fn output_jacobian(&self, _own: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]))
    }

    fn nominal_state(&self) -> DVector<f64> {
        DVector::from_element(3, 1.0)
    }
}

/// Three-vessel estimation model in the coordinates of `scaling`; outputs are scaled temperatures.
pub fn reactor_estimation_model(cfg: &ReactorSeparatorConfig, scaling: &ScalingMap) -> Result<NonlinearModel> {
    let cfg = Arc::new(cfg.clone());
    let partition = Partition::new(vec![3; VESSELS], vec![1; VESSELS], UPSTREAM.iter().map(|&u| vec![u]).collect())?;
    let subs = (0..VESSELS)
        .map(|v| Ok(Arc::new(ReactorVessel::new(cfg.clone(), v, scaling)?) as Arc<dyn SubsystemDynamics>))
        .collect::<Result<Vec<_>>>()?;
    NonlinearModel::new(partition, subs)
}
