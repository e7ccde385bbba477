//! Feedforward networks with exact reverse-mode gradients, the quadratic
//! execution features, and the per-stage generating function.

mod features;
mod generating;
mod mlp;
mod optim;

pub use features::{quadratic_feature_dim, quadratic_features, FeatureMap};
pub use generating::GeneratingFunction;
pub use mlp::{backward_tape, forward_tape, Activation, Architecture, Mlp, Tape, SOFTPLUS_BETA};
pub use optim::AdamState;
