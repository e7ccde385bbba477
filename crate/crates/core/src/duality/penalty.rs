use super::value::ValueFunction;
use crate::control::{internal_stage_reward, internal_terminal_reward, ControlProblem, NoiseModel, NoisePath};
use crate::error::{AdrlError, Result};
use crate::neural::GeneratingFunction;
use crate::rng::{stream, Purpose};

/// How the conditional expectation inside a penalty term is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expectation {
    /// Enumerate a finite noise support with its probabilities.
    Exact,
    /// Average over `samples` draws per stage, frozen for the lifetime of
    /// the context. `round` selects an independent set of draws (one per
    /// training iteration).
    MonteCarlo { samples: usize, seed: u64, round: u64 },
    /// Fresh draws for every outer path, keyed by its id. The draws are
    /// independent of the path, so the penalty has mean zero under any
    /// non-anticipative policy instead of only on average over rounds.
    PerPath { samples: usize, seed: u64 },
}

/// Weighted noise points for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureNodes {
    pub dim: usize,
    pub weights: Vec<f64>,
    points: Vec<f64>,
}

impl QuadratureNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn exact(noise: &NoiseModel) -> Result<Self> {
        match noise {
            NoiseModel::Finite { support, probs } => Ok(QuadratureNodes {
                dim: noise.dim(),
                weights: probs.clone(),
                points: support.concat(),
            }),
            _ => Err(AdrlError::Unsupported("exact expectations need finite-support noise".into())),
        }
    }

    /// `samples` draws from stream `(seed, purpose, a, b)`, equally weighted.
    pub fn sampled(noise: &NoiseModel, samples: usize, seed: u64, purpose: Purpose, a: u64, b: u64) -> Result<Self> {
        if samples == 0 {
            return Err(AdrlError::config("Monte Carlo expectation needs at least one sample"));
        }
        let dim = noise.dim();
        let mut rng = stream(seed, purpose, a, b);
        let mut points = vec![0.0; samples * dim];
        for k in 0..samples {
            noise.sample(&mut rng, &mut points[k * dim..(k + 1) * dim]);
        }
        Ok(QuadratureNodes { dim, weights: vec![1.0 / samples as f64; samples], points })
    }

    pub fn build(noise: &NoiseModel, scheme: Expectation, purpose: Purpose, a: u64, b: u64) -> Result<Self> {
        match scheme {
            Expectation::Exact => Self::exact(noise),
            Expectation::MonteCarlo { samples, seed, round } => {
                Self::sampled(noise, samples, seed, purpose, a.wrapping_add(round.wrapping_mul(0x1_0000_0001)), b)
            }
            Expectation::PerPath { samples, seed } => Self::sampled(noise, samples, seed, purpose, a, b),
        }
    }
}

/// A penalty built from a generating function and a frozen expectation rule.
///
/// Immutable once built; shared across every path of one outer iteration.
pub struct PenaltyContext<'a> {
    value: &'a dyn ValueFunction,
    nodes: Vec<QuadratureNodes>,
    scheme: Expectation,
}

/// `Y` along one path together with its penalty terms and states.
#[derive(Clone, Debug, PartialEq)]
pub struct PathwiseObjective {
    /// Internal (maximisation) sense.
    pub objective: f64,
    pub penalties: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

const FEASIBILITY_TOL: f64 = 1e-9;

impl<'a> PenaltyContext<'a> {
    pub fn new<P: ControlProblem + ?Sized>(problem: &P, value: &'a dyn ValueFunction, scheme: Expectation) -> Result<Self> {
        let horizon = problem.dims().horizon;
        let nodes = (0..horizon)
            .map(|t| QuadratureNodes::build(problem.noise(), scheme, Purpose::InnerExpectation, 0, t as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(PenaltyContext { value, nodes, scheme })
    }

    /// The context used along path `path_id`: a copy with that path's own
    /// draws under [`Expectation::PerPath`], `None` when `self` applies.
    pub fn for_path<P: ControlProblem + ?Sized>(&self, problem: &P, path_id: u64) -> Result<Option<PenaltyContext<'a>>> {
        let Expectation::PerPath { .. } = self.scheme else {
            return Ok(None);
        };
        let nodes = (0..self.nodes.len())
            .map(|t| {
                QuadratureNodes::build(problem.noise(), self.scheme, Purpose::InnerExpectation, path_id.wrapping_add(1), t as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(PenaltyContext { value: self.value, nodes, scheme: self.scheme }))
    }

    pub fn scheme(&self) -> Expectation {
        self.scheme
    }

    pub fn value_function(&self) -> &dyn ValueFunction {
        self.value
    }

    pub fn nodes(&self, t: usize) -> &QuadratureNodes {
        &self.nodes[t]
    }

    /// `Ê[W_{t+1}(f_t(s, a, η))]`.
    pub fn expected_next_value<P: ControlProblem + ?Sized>(&self, problem: &P, t: usize, s: &[f64], a: &[f64]) -> f64 {
        let nodes = &self.nodes[t];
        let mut next = vec![0.0; s.len()];
        let mut acc = 0.0;
        for k in 0..nodes.len() {
            problem.transition(t, s, a, nodes.point(k), &mut next);
            acc += nodes.weights[k] * self.value.value(t + 1, &next);
        }
        acc
    }

    /// `z_t = W_{t+1}(s_{t+1}) - Ê[W_{t+1}(f_t(s_t, a_t, η))]`.
    pub fn penalty_term<P: ControlProblem + ?Sized>(
        &self,
        problem: &P,
        t: usize,
        state: &[f64],
        action: &[f64],
        next_state: &[f64],
    ) -> Result<f64> {
        if t >= problem.dims().horizon {
            return Err(AdrlError::Range(format!("no penalty term at t = {t} (horizon {})", problem.dims().horizon)));
        }
        Ok(self.value.value(t + 1, next_state) - self.expected_next_value(problem, t, state, action))
    }

    /// `Y = Σ r_t + R(s_T) - Σ z_t` for the open-loop schedule `actions`.
    pub fn pathwise_objective<P: ControlProblem + ?Sized>(
        &self,
        problem: &P,
        actions: &[f64],
        path: &NoisePath,
    ) -> Result<PathwiseObjective> {
        let dims = problem.dims();
        if actions.len() != dims.horizon * dims.action {
            return Err(AdrlError::config("schedule has the wrong shape"));
        }
        let mut s = problem.initial_state();
        let mut states = Vec::with_capacity(dims.horizon + 1);
        let mut penalties = Vec::with_capacity(dims.horizon);
        let mut objective = 0.0;
        let mut worst: f64 = 0.0;
        for t in 0..dims.horizon {
            let a = &actions[t * dims.action..(t + 1) * dims.action];
            worst = worst.max(problem.constraints(t, &s, a).max_violation());
            let mut next = vec![0.0; dims.state];
            problem.transition(t, &s, a, path.noise_at(t), &mut next);
            let z = self.penalty_term(problem, t, &s, a, &next)?;
            objective += internal_stage_reward(problem, t, &s, a) - z;
            penalties.push(z);
            states.push(std::mem::replace(&mut s, next));
        }
        if !(worst <= FEASIBILITY_TOL) {
            return Err(AdrlError::Feasibility { max_violation: worst });
        }
        objective += internal_terminal_reward(problem, &s);
        states.push(s);
        Ok(PathwiseObjective { objective, penalties, states })
    }

    /// `Y` without feasibility checks or bookkeeping.
    pub(crate) fn objective<P: ControlProblem + ?Sized>(&self, problem: &P, actions: &[f64], path: &NoisePath) -> f64 {
        let dims = problem.dims();
        let mut s = problem.initial_state();
        let mut next = vec![0.0; dims.state];
        let mut y = 0.0;
        for t in 0..dims.horizon {
            let a = &actions[t * dims.action..(t + 1) * dims.action];
            problem.transition(t, &s, a, path.noise_at(t), &mut next);
            y += internal_stage_reward(problem, t, &s, a) - self.value.value(t + 1, &next)
                + self.expected_next_value(problem, t, &s, a);
            std::mem::swap(&mut s, &mut next);
        }
        y + internal_terminal_reward(problem, &s)
    }

    /// `Y` and its gradient with respect to the schedule (adjoint pass).
    ///
    /// Value-function gradients are taken during the forward sweep, so each
    /// network is evaluated once per point.
    pub(crate) fn objective_grad<P: ControlProblem + ?Sized>(
        &self,
        problem: &P,
        actions: &[f64],
        path: &NoisePath,
        grad: &mut [f64],
    ) -> f64 {
        let dims = problem.dims();
        let (sd, ad) = (dims.state, dims.action);
        let sign = problem.sense().sign();
        let mut states = Vec::with_capacity(dims.horizon + 1);
        states.push(problem.initial_state());
        // ∇W_{t+1} at s_{t+1}, and Σ_k w_k ∇W_{t+1} at each node pulled back
        // to (s_t, a_t)
        let mut w_next = vec![0.0; dims.horizon * sd];
        let mut node_gs = vec![0.0; dims.horizon * sd];
        let mut node_ga = vec![0.0; dims.horizon * ad];
        let mut next_k = vec![0.0; sd];
        let mut w_grad = vec![0.0; sd];
        let mut y = 0.0;
        for t in 0..dims.horizon {
            let a = &actions[t * ad..(t + 1) * ad];
            let s = &states[t];
            let mut next = vec![0.0; sd];
            problem.transition(t, s, a, path.noise_at(t), &mut next);
            y += internal_stage_reward(problem, t, s, a);
            y -= self.value.value_and_grad(t + 1, &next, 1.0, &mut w_next[t * sd..(t + 1) * sd]);
            let nodes = &self.nodes[t];
            for k in 0..nodes.len() {
                let eta = nodes.point(k);
                problem.transition(t, s, a, eta, &mut next_k);
                w_grad.iter_mut().for_each(|g| *g = 0.0);
                y += nodes.weights[k] * self.value.value_and_grad(t + 1, &next_k, nodes.weights[k], &mut w_grad);
                problem.transition_vjp(
                    t,
                    s,
                    a,
                    eta,
                    &w_grad,
                    &mut node_gs[t * sd..(t + 1) * sd],
                    &mut node_ga[t * ad..(t + 1) * ad],
                );
            }
            states.push(next);
        }
        y += internal_terminal_reward(problem, &states[dims.horizon]);

        grad.copy_from_slice(&node_ga);
        // lambda = dY/ds_{t+1}
        let mut lambda = vec![0.0; sd];
        problem.terminal_reward_grad(&states[dims.horizon], sign, &mut lambda);
        for t in (0..dims.horizon).rev() {
            let s = &states[t];
            let a = &actions[t * ad..(t + 1) * ad];
            lambda.iter_mut().zip(&w_next[t * sd..(t + 1) * sd]).for_each(|(l, w)| *l -= w);
            let mut gs = node_gs[t * sd..(t + 1) * sd].to_vec();
            let ga = &mut grad[t * ad..(t + 1) * ad];
            problem.stage_reward_grad(t, s, a, sign, &mut gs, ga);
            problem.transition_vjp(t, s, a, path.noise_at(t), &lambda, &mut gs, ga);
            lambda = gs;
        }
        y
    }

    /// Accumulates `scale · Σ_t ∇_φ z_t` along the given states and
    /// actions. Only trainable blocks receive gradient.
    pub fn accumulate_penalty_param_grad<P: ControlProblem + ?Sized>(
        &self,
        problem: &P,
        gen: &GeneratingFunction,
        states: &[Vec<f64>],
        actions: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let dims = problem.dims();
        let mut next = vec![0.0; dims.state];
        for t in 0..dims.horizon {
            if !gen.is_trainable(t + 1) {
                continue;
            }
            let a = &actions[t * dims.action..(t + 1) * dims.action];
            gen.network_grad_params(t + 1, &states[t + 1], scale, grad);
            let nodes = &self.nodes[t];
            for k in 0..nodes.len() {
                problem.transition(t, &states[t], a, nodes.point(k), &mut next);
                gen.network_grad_params(t + 1, &next, -scale * nodes.weights[k], grad);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::{FnValue, ZeroValue};
    use crate::envs::{make_toy_t1, TradeExecModel, TradeExecution};

    fn identity_w() -> FnValue<impl Fn(usize, &[f64]) -> f64 + Sync, impl Fn(usize, &[f64]) -> Vec<f64> + Sync> {
        FnValue { value: |_: usize, s: &[f64]| s[0], grad: |_: usize, _: &[f64]| vec![1.0] }
    }

    #[test]
    fn constant_w_gives_zero_penalty() {
        let p = make_toy_t1();
        let w = FnValue { value: |_: usize, _: &[f64]| 3.7, grad: |_: usize, _: &[f64]| vec![0.0] };
        let ctx = PenaltyContext::new(&p, &w, Expectation::Exact).unwrap();
        assert_eq!(ctx.penalty_term(&p, 0, &[0.0], &[0.4], &[0.4]).unwrap(), 0.0);
    }

    #[test]
    fn identity_w_penalties() {
        let p = make_toy_t1();
        let w = identity_w();
        let ctx = PenaltyContext::new(&p, &w, Expectation::Exact).unwrap();
        assert_eq!(ctx.penalty_term(&p, 0, &[0.0], &[1.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(ctx.penalty_term(&p, 0, &[0.0], &[1.0], &[-1.0]).unwrap(), -1.0);
        assert!(matches!(ctx.penalty_term(&p, 1, &[0.0], &[1.0], &[1.0]), Err(AdrlError::Range(_))));
    }

    #[test]
    fn pathwise_objective_examples() {
        let p = make_toy_t1();
        let plus = NoisePath::from_steps(0, &[vec![1.0]]).unwrap();
        let zero = ZeroValue;
        let ctx0 = PenaltyContext::new(&p, &zero, Expectation::Exact).unwrap();
        assert_eq!(ctx0.pathwise_objective(&p, &[1.0], &plus).unwrap().objective, 1.0);
        let w = identity_w();
        let ctx = PenaltyContext::new(&p, &w, Expectation::Exact).unwrap();
        let r = ctx.pathwise_objective(&p, &[1.0], &plus).unwrap();
        assert_eq!((r.objective, r.penalties.clone()), (0.0, vec![1.0]));
        for a in [0.0, 0.3, 0.9] {
            for xi in [-1.0, 1.0] {
                let path = NoisePath::from_steps(0, &[vec![xi]]).unwrap();
                assert_eq!(ctx.pathwise_objective(&p, &[a], &path).unwrap().objective, 0.0);
            }
        }
        assert!(matches!(
            ctx.pathwise_objective(&p, &[1.5], &plus),
            Err(AdrlError::Feasibility { .. })
        ));
    }

    #[test]
    fn exact_scheme_needs_finite_noise() {
        let p = TradeExecution::new(TradeExecModel::scaled_down(true).unwrap()).unwrap();
        assert!(PenaltyContext::new(&p, &ZeroValue, Expectation::Exact).is_err());
        let mc = Expectation::MonteCarlo { samples: 8, seed: 1, round: 0 };
        let ctx = PenaltyContext::new(&p, &ZeroValue, mc).unwrap();
        assert_eq!(ctx.nodes(0).len(), 8);
        assert_ne!(ctx.nodes(0).point(0), ctx.nodes(1).point(0));
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let model = TradeExecModel::scaled_down(false).unwrap();
        let p = TradeExecution::new(model.clone()).unwrap();
        let gen = crate::neural::GeneratingFunction::initialized(
            5,
            crate::neural::FeatureMap::for_exec(&model),
            5,
            2,
            crate::neural::Activation::Softplus,
            true,
            4,
        )
        .unwrap();
        let mut gen = gen;
        let mut params = gen.params().to_vec();
        let mut rng = stream(9, Purpose::Init, 7, 7);
        for v in params.iter_mut() {
            *v += 0.05 * crate::rng::standard_normal(&mut rng);
        }
        gen.set_params(&params).unwrap();
        let w = crate::duality::NetworkValue::new(&p, &gen);
        let ctx = PenaltyContext::new(&p, &w, Expectation::MonteCarlo { samples: 6, seed: 2, round: 0 }).unwrap();
        let ds = crate::control::sample_noise_dataset(&p, 1, 1, 3).unwrap();
        let path = &ds.paths()[0];
        let x: Vec<f64> = (0..15).map(|i| 2.0 + 0.1 * (i as f64).sin()).collect();
        let mut g = vec![0.0; 15];
        let y = ctx.objective_grad(&p, &x, path, &mut g);
        assert!((y - ctx.objective(&p, &x, path)).abs() < 1e-9);
        let h = 1e-5;
        for i in 0..15 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (ctx.objective(&p, &up, path) - ctx.objective(&p, &dn, path)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * g[i].abs().max(1.0), "coord {i}: fd {fd} vs {}", g[i]);
        }
    }
}
