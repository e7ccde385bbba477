//! Policies and bounds built on a generating function, exact reference
//! solutions, and the DERM baseline.

mod closed_form;
mod derm;
mod greedy;
mod oracle;
mod report;
mod surrogate;

pub use closed_form::{exec_closed_form, uniform_schedule_cost, ExecClosedForm};
pub use derm::{
    derm_stopping_rule, derm_train, stop_iteration, DermConfig, DermOptimizer, DermPolicy, DermRecord, DermRun,
    StopRecommendation,
};
pub use greedy::{GreedyAction, GreedyPolicy};
pub use oracle::{dp_oracle_discrete, DpOracle, TabularValue, MAX_GRID_POINTS, MAX_ORACLE_HORIZON, MAX_ORACLE_NODES};
pub use report::{bound_report, gap_scale, relative_gap, BoundConfig, BoundReport};
pub use surrogate::{fit_policy_surrogate, LinearSurrogate, ProjectedSurrogate, SurrogateFit, RIDGE_LAMBDA};
