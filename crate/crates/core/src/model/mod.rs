//! Partitioned linear and nonlinear system descriptions.

mod file;
mod linear;
mod nonlinear;
mod partition;

pub use file::{linear_model_to_toml, load_linear_model, parse_linear_model};
pub use linear::{PartitionedLinearModel, Selectors};
pub use nonlinear::{central_difference, NonlinearModel, StepJacobian, SubsystemDynamics, FD_STEP};
pub use partition::Partition;
