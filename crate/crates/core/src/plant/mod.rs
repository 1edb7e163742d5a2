//! Truth simulators: linear interconnected plants and the reactor–separator process.

mod linear;
mod reactor;
mod scaling;

pub use linear::{simulate_linear, NoiseSpec, Trajectory};
pub use reactor::{
    reactor_estimation_model, simulate_reactor, step_reactor_separator, vessel_derivative, vessel_step,
    ReactorSeparatorConfig, ReactorVessel, VESSELS,
};
pub use scaling::ScalingMap;

use crate::error::Result;
use nalgebra::DVector;

/// Write `t, states…, outputs…` rows.
pub fn write_trajectory_csv<W: std::io::Write>(out: W, sample_time: f64, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let nx = traj.states.first().map_or(0, DVector::len);
    let ny = traj.outputs.first().map_or(0, DVector::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=nx).map(|j| format!("x{j}")));
    header.extend((1..=ny).map(|j| format!("y{j}")));
    w.write_record(&header)?;
    for (k, (x, y)) in traj.states.iter().zip(&traj.outputs).enumerate() {
        let mut row = vec![format!("{:e}", k as f64 * sample_time)];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        row.extend(y.iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
