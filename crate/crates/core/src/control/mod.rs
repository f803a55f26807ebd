//! Optimal control through differentiable rollouts: quadratic costs, neural
//! controllers, direct trajectory optimization and receding-horizon control.

mod controller;
mod cost;
mod optimize;

pub use controller::{BoundController, Controller, Feedback, NeuralPolicy, Saturation};
pub use cost::{cost, quadratic_form, CostSpec};
pub use optimize::{
    controller_loss_and_grad, direct_optimal_control, evaluate_policy, mpc_loop,
    optimize_controller, ControlGradient, ControlReport, MpcConfig, OptimizeOutcome,
    TrainControlConfig,
};
