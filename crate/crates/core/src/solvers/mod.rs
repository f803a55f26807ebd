//! Fixed-step schemes, the adaptive reference solver, residuals and rollouts.

mod dopri5;
mod reference;
mod residual;
mod rollout;
mod scheme;

pub use dopri5::{dopri5_final, dopri5_solve, DenseSolution, Dopri5Options, Dopri5Stats};
pub use reference::Reference;
pub use residual::{
    compute_residual, local_error_of, norm2, residuals_along_trajectory, residuals_to_csv,
    sample_residual, ResidualSample,
};
pub use rollout::{
    global_error, rollout, rollout_batch, ControlSequence, Counter, Counts, GlobalError, Hold,
    Policy, TimeFunction, TimeGrid, Trajectory,
};
pub use scheme::{fixed_step, scheme_step, Scheme, StageFn, StepOutput};
