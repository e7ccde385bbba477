#![allow(dead_code)]

use adrl_core::control::{ControlProblem, NoisePath};
use adrl_core::duality::PenaltyContext;
use adrl_core::envs::ToyChain;
use adrl_core::neural::{Activation, Architecture, FeatureMap, GeneratingFunction};
use adrl_core::rng::{standard_normal, stream, Purpose};

/// Softplus generating function on the scalar toy state with every
/// parameter drawn from `N(0, scale²)`.
pub fn random_toy_gen(horizon: usize, width: usize, scale: f64, seed: u64) -> GeneratingFunction {
    let arch = Architecture::new(1, width, 1, 1, Activation::Softplus);
    let mut gen = GeneratingFunction::zeros(horizon, FeatureMap::Identity { dim: 1 }, arch, false).unwrap();
    let mut rng = stream(seed, Purpose::Init, 99, 0);
    let params: Vec<f64> = gen.params().iter().map(|_| scale * standard_normal(&mut rng)).collect();
    gen.set_params(&params).unwrap();
    gen
}

/// A deterministic feedback rule `a_t = clamp(0.5 + c₀ sin(c₁ s + c₂ t))`.
pub fn random_feedback(seed: u64) -> impl Fn(usize, &[f64]) -> Vec<f64> + Sync {
    let mut rng = stream(seed, Purpose::Init, 7, 0);
    let c: Vec<f64> = (0..3).map(|_| standard_normal(&mut rng)).collect();
    move |t: usize, s: &[f64]| vec![(0.5 + c[0] * (c[1] * s[0] + c[2] * t as f64).sin()).clamp(0.0, 1.0)]
}

/// Penalties along `path` when actions come from `policy`.
pub fn penalties_under_policy<F: Fn(usize, &[f64]) -> Vec<f64>>(
    ctx: &PenaltyContext<'_>,
    problem: &ToyChain,
    policy: &F,
    path: &NoisePath,
) -> Vec<f64> {
    let dims = problem.dims();
    let mut s = problem.initial_state();
    let mut actions = Vec::new();
    for t in 0..dims.horizon {
        let a = policy(t, &s);
        let mut next = vec![0.0; dims.state];
        problem.transition(t, &s, &a, path.noise_at(t), &mut next);
        actions.extend(a);
        s = next;
    }
    ctx.pathwise_objective(problem, &actions, path).unwrap().penalties
}
