//! Bounds for finite-horizon stochastic control from information relaxation.
//!
//! A neural penalty-generating function is trained against a pathwise inner
//! maximiser; the trained function yields a dual bound and a greedy policy,
//! and together they certify a gap on the optimal value.

pub mod bounds;
pub mod control;
pub mod duality;
pub mod envs;
pub mod error;
pub mod neural;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{AdrlError, Result};
