//! Local window problems (linear and nonlinear) and the full-information oracle.

mod oracle;
mod solve;
mod window;

pub use oracle::{fie_normal_equations, schur_last_block, solve_fie_oracle, FieMode};
pub use solve::{gauss_newton_best_effort, solve_gauss_newton, solve_local_mhe_linear, solve_local_mhe_nonlinear, GN_MAX_ITERATIONS, GN_REL_DECREASE};
pub(crate) use window::WindowProblem;
pub use window::{ConstraintSet, EstimationWindow, LocalSolution, LocalWeights, OutputRows, WindowPrior};
