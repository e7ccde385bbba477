//! Information-relaxation penalties, the pathwise inner maximisation and
//! dual value estimation.

mod penalty;
mod solver;
mod value;

pub use penalty::{Expectation, PathwiseObjective, PenaltyContext, QuadratureNodes};
pub use solver::{
    dual_value, dual_value_warm, inner_solve, projected_ascent, AscentResult, DualEstimate, DualSolveResult,
    SolverConfig, StartKind,
};
pub use value::{FnValue, NetworkValue, ValueFunction, ZeroValue};
