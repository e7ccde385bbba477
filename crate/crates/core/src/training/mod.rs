//! Outer gradient estimators and the alternating training loop.

mod adrl;
mod estimators;

pub use adrl::{
    train_adrl, train_adrl_with, Estimator, TrainConfig, TrainOutcome, TrainRecord, TrainTrace,
    MAX_CONSECUTIVE_ABORTS,
};
pub use estimators::{
    rademacher_direction, rm_gradient, rm_gradient_from, solve_batch, spsa_estimate, spsa_gradient, GradientEstimate,
    SpsaEstimate, SpsaSchedule, MAX_EXCLUDED_FRACTION,
};
