//! Finite-horizon controlled stochastic systems.
//!
//! A [`ControlProblem`] evolves `s_{t+1} = f_t(s_t, a_t, ξ_{t+1})` for stages
//! `t = 0..T-1`, collects stage rewards `r_t(s_t, a_t)` and a terminal reward
//! `R(s_T)`. Rewards are reported in the problem's native sense; the rest of
//! the toolkit works with the internal maximisation objective
//! `sense.sign() * native`.

mod dataset;
mod noise;

pub use dataset::{enumerate_noise_dataset, sample_noise_dataset, NoiseDataset, NoisePath};
pub(crate) use dataset::sample_paths;
pub use noise::NoiseModel;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdrlError, Result};
use crate::parallel::map_indexed;
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// Factor converting native values to the internal maximisation objective
    /// (and back; the map is an involution).
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sense::Maximize => Sense::Minimize,
            Sense::Minimize => Sense::Maximize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub horizon: usize,
    pub state: usize,
    pub action: usize,
    pub noise: usize,
}

/// Constraint values `g_i(s, a)` for equalities (`= 0`) and inequalities (`>= 0`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintResiduals {
    pub equalities: Vec<f64>,
    pub inequalities: Vec<f64>,
}

impl ConstraintResiduals {
    pub fn max_violation(&self) -> f64 {
        let eq = self.equalities.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        self.inequalities.iter().fold(eq, |m, g| m.max(-g))
    }
}

/// A finite-horizon stochastic control problem.
///
/// Schedules (open-loop action sequences) are stored row-major as `T × n`
/// slices: stage `t` occupies `schedule[t*n..(t+1)*n]`.
///
/// Gradient methods *accumulate* `scale * ∇` into their output buffers.
pub trait ControlProblem: Send + Sync {
    fn dims(&self) -> Dims;
    fn sense(&self) -> Sense;
    fn initial_state(&self) -> Vec<f64>;
    fn noise(&self) -> &NoiseModel;

    fn transition(&self, t: usize, state: &[f64], action: &[f64], noise: &[f64], next: &mut [f64]);

    /// Vector-Jacobian product of `transition` with respect to state and action.
    #[allow(clippy::too_many_arguments)]
    fn transition_vjp(
        &self,
        t: usize,
        state: &[f64],
        action: &[f64],
        noise: &[f64],
        cotangent: &[f64],
        grad_state: &mut [f64],
        grad_action: &mut [f64],
    );

    fn stage_reward(&self, t: usize, state: &[f64], action: &[f64]) -> f64;

    fn stage_reward_grad(
        &self,
        t: usize,
        state: &[f64],
        action: &[f64],
        scale: f64,
        grad_state: &mut [f64],
        grad_action: &mut [f64],
    );

    fn terminal_reward(&self, state: &[f64]) -> f64;

    fn terminal_reward_grad(&self, state: &[f64], scale: f64, grad: &mut [f64]);

    /// Constraint functions describing `A_t(s)`.
    fn constraints(&self, t: usize, state: &[f64], action: &[f64]) -> ConstraintResiduals;

    /// Euclidean projection of a single-stage action onto `A_t(s)`.
    fn project_action(&self, t: usize, state: &[f64], action: &mut [f64]);

    /// Euclidean projection of a whole open-loop schedule onto `A^T` from `s_0`.
    fn project_schedule(&self, schedule: &mut [f64]);

    /// Largest constraint violation of an open-loop schedule from `s_0`.
    fn schedule_violation(&self, schedule: &[f64]) -> f64;

    /// A deterministic interior feasible schedule.
    fn nominal_schedule(&self) -> Vec<f64>;

    /// A deterministic feasible stage action for state `s` at stage `t`.
    fn nominal_action(&self, t: usize, state: &[f64]) -> Vec<f64>;

    /// Random feasible schedule (used as a solver restart).
    fn random_schedule(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let mut s = self.nominal_schedule();
        for v in s.iter_mut() {
            let u: f64 = rng.random();
            *v += (2.0 * u - 1.0) * (v.abs() + 1.0);
        }
        self.project_schedule(&mut s);
        s
    }

    /// Finite action grid for `A_t(s)` with `points` values per coordinate.
    fn action_grid(&self, _t: usize, _state: &[f64], _points: usize) -> Result<Vec<Vec<f64>>> {
        Err(AdrlError::Unsupported("this problem has no finite action grid".into()))
    }

    /// Internal-sense function of the state components whose transition
    /// involves no noise, added to learned value functions. Penalty terms
    /// do not change when such a function is added, so training cannot
    /// identify it; it only shapes the greedy lookahead. Zero by default.
    fn deterministic_baseline(&self, _t: usize, _state: &[f64]) -> f64 {
        0.0
    }

    /// Accumulates `scale · ∇_s` of [`ControlProblem::deterministic_baseline`].
    fn deterministic_baseline_grad(&self, _t: usize, _state: &[f64], _scale: f64, _grad: &mut [f64]) {}

    /// State coordinates that are a deterministic function of the actions
    /// taken so far. Empty by default.
    fn action_determined(&self) -> Range<usize> {
        0..0
    }
}

/// Internal maximisation view of the native stage reward.
#[inline]
pub fn internal_stage_reward<P: ControlProblem + ?Sized>(
    p: &P,
    t: usize,
    s: &[f64],
    a: &[f64],
) -> f64 {
    p.sense().sign() * p.stage_reward(t, s, a)
}

#[inline]
pub fn internal_terminal_reward<P: ControlProblem + ?Sized>(p: &P, s: &[f64]) -> f64 {
    p.sense().sign() * p.terminal_reward(s)
}

/// A feedback policy `(t, s) -> a`.
pub trait Policy: Sync {
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>>;
}

impl<F> Policy for F
where
    F: Fn(usize, &[f64]) -> Vec<f64> + Sync,
{
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self(t, state))
    }
}

/// An open-loop schedule replayed as a policy (ignores the state).
pub struct ScheduleReplay<'a> {
    pub schedule: &'a [f64],
    pub action_dim: usize,
}

impl Policy for ScheduleReplay<'_> {
    fn act(&self, t: usize, _state: &[f64]) -> Result<Vec<f64>> {
        let n = self.action_dim;
        Ok(self.schedule[t * n..(t + 1) * n].to_vec())
    }
}

/// One simulated path. Rewards are in the native sense.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub stage_rewards: Vec<f64>,
    pub terminal_reward: f64,
    pub total: f64,
}

const FEASIBILITY_TOL: f64 = 1e-9;

/// Simulate `policy` along one noise path.
pub fn rollout<P, Q>(problem: &P, policy: &Q, path: &NoisePath) -> Result<Trajectory>
where
    P: ControlProblem + ?Sized,
    Q: Policy + ?Sized,
{
    let dims = problem.dims();
    if path.horizon() != dims.horizon || path.noise_dim() != dims.noise {
        return Err(AdrlError::config("noise path does not match problem dimensions"));
    }
    let mut states = Vec::with_capacity(dims.horizon + 1);
    let mut actions = Vec::with_capacity(dims.horizon);
    let mut stage_rewards = Vec::with_capacity(dims.horizon);
    let mut s = problem.initial_state();
    for t in 0..dims.horizon {
        let mut a = policy.act(t, &s)?;
        if a.len() != dims.action || a.iter().any(|v| !v.is_finite()) {
            return Err(AdrlError::Evaluation {
                t,
                state: s.clone(),
                msg: format!("policy returned invalid action {a:?}"),
            });
        }
        if problem.constraints(t, &s, &a).max_violation() > FEASIBILITY_TOL {
            problem.project_action(t, &s, &mut a);
        }
        stage_rewards.push(problem.stage_reward(t, &s, &a));
        let mut next = vec![0.0; dims.state];
        problem.transition(t, &s, &a, path.noise_at(t), &mut next);
        states.push(std::mem::replace(&mut s, next));
        actions.push(a);
    }
    let terminal_reward = problem.terminal_reward(&s);
    states.push(s);
    let total = stage_rewards.iter().sum::<f64>() + terminal_reward;
    Ok(Trajectory { states, actions, stage_rewards, terminal_reward, total })
}

/// Expected total reward of `policy` in the native sense.
///
/// On an enumerated dataset the result is the exact probability-weighted
/// expectation with zero standard error.
pub fn evaluate_policy<P, Q>(problem: &P, policy: &Q, dataset: &NoiseDataset) -> Result<Estimate>
where
    P: ControlProblem + ?Sized,
    Q: Policy + ?Sized,
{
    let totals = policy_totals(problem, policy, dataset)?;
    Ok(match dataset.weights() {
        Some(w) => Estimate::from_weighted(&totals, w),
        None => Estimate::from_samples(&totals),
    })
}

/// Per-path rollout totals, in dataset order.
pub fn policy_totals<P, Q>(problem: &P, policy: &Q, dataset: &NoiseDataset) -> Result<Vec<f64>>
where
    P: ControlProblem + ?Sized,
    Q: Policy + ?Sized,
{
    if dataset.is_empty() {
        return Err(AdrlError::config("cannot evaluate a policy on an empty dataset"));
    }
    map_indexed(dataset.len(), |i| rollout(problem, policy, &dataset.paths()[i]).map(|tr| tr.total))
        .into_iter()
        .collect()
}

/// The same problem with rewards negated and the sense flipped.
pub struct Negated<P>(pub P);

impl<P: ControlProblem> ControlProblem for Negated<P> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn sense(&self) -> Sense {
        self.0.sense().flipped()
    }
    fn initial_state(&self) -> Vec<f64> {
        self.0.initial_state()
    }
    fn noise(&self) -> &NoiseModel {
        self.0.noise()
    }
    fn transition(&self, t: usize, s: &[f64], a: &[f64], xi: &[f64], next: &mut [f64]) {
        self.0.transition(t, s, a, xi, next)
    }
    fn transition_vjp(
        &self,
        t: usize,
        s: &[f64],
        a: &[f64],
        xi: &[f64],
        cot: &[f64],
        gs: &mut [f64],
        ga: &mut [f64],
    ) {
        self.0.transition_vjp(t, s, a, xi, cot, gs, ga)
    }
    fn stage_reward(&self, t: usize, s: &[f64], a: &[f64]) -> f64 {
        -self.0.stage_reward(t, s, a)
    }
    fn stage_reward_grad(&self, t: usize, s: &[f64], a: &[f64], scale: f64, gs: &mut [f64], ga: &mut [f64]) {
        self.0.stage_reward_grad(t, s, a, -scale, gs, ga)
    }
    fn terminal_reward(&self, s: &[f64]) -> f64 {
        -self.0.terminal_reward(s)
    }
    fn terminal_reward_grad(&self, s: &[f64], scale: f64, g: &mut [f64]) {
        self.0.terminal_reward_grad(s, -scale, g)
    }
    fn constraints(&self, t: usize, s: &[f64], a: &[f64]) -> ConstraintResiduals {
        self.0.constraints(t, s, a)
    }
    fn project_action(&self, t: usize, s: &[f64], a: &mut [f64]) {
        self.0.project_action(t, s, a)
    }
    fn project_schedule(&self, schedule: &mut [f64]) {
        self.0.project_schedule(schedule)
    }
    fn schedule_violation(&self, schedule: &[f64]) -> f64 {
        self.0.schedule_violation(schedule)
    }
    fn nominal_schedule(&self) -> Vec<f64> {
        self.0.nominal_schedule()
    }
    fn nominal_action(&self, t: usize, s: &[f64]) -> Vec<f64> {
        self.0.nominal_action(t, s)
    }
    fn random_schedule(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.0.random_schedule(rng)
    }
    fn action_grid(&self, t: usize, s: &[f64], points: usize) -> Result<Vec<Vec<f64>>> {
        self.0.action_grid(t, s, points)
    }
    fn deterministic_baseline(&self, t: usize, s: &[f64]) -> f64 {
        self.0.deterministic_baseline(t, s)
    }
    fn deterministic_baseline_grad(&self, t: usize, s: &[f64], scale: f64, g: &mut [f64]) {
        self.0.deterministic_baseline_grad(t, s, scale, g)
    }
    fn action_determined(&self) -> Range<usize> {
        self.0.action_determined()
    }
}
