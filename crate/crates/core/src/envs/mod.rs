//! Concrete control problems.

mod exec;
mod simplex;
mod toy;

pub use exec::{
    exec_dynamics, exec_stage_cost, project_schedule, ExecModelConfig, ExecState, TradeExecModel,
    TradeExecution,
};
pub use simplex::{project_hyperplane, project_scaled_simplex};
pub use toy::{make_toy_chain, make_toy_chain_with, make_toy_t1, ToyChain, ToyTerminal, MAX_TOY_HORIZON};
