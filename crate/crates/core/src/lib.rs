//! Distributed moving horizon estimation for linear and nonlinear interconnected systems.

pub mod arrival;
pub mod coordinator;
pub mod error;
pub mod estimator;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod local;
pub mod model;
pub mod plant;
pub mod qp;
pub mod stability;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
