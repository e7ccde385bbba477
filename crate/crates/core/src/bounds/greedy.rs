use std::ops::Range;

use crate::control::{internal_stage_reward, ControlProblem, Policy};
use crate::duality::{projected_ascent, Expectation, QuadratureNodes, SolverConfig, ValueFunction};
use crate::error::{AdrlError, Result};
use crate::rng::{hash_f64s, Purpose};

/// One-step lookahead policy `argmax_a r_t(s, a) + Ê[W_{t+1}(f_t(s, a, ξ))]`.
///
/// Monte Carlo expectations use a sample keyed by `(t, state)`, so repeated
/// queries at the same state return the same action.
///
/// When the problem has action-determined state coordinates, `W_{t+1}` is
/// replaced by `W(s) - W(s̄) + b(s̄)`, where `s̄` is the initial state carrying
/// the action-determined coordinates of `s` and `b` is the deterministic
/// baseline. The two differ by a function of those coordinates alone, so
/// they define the same penalty and dual bound. Training leaves that
/// function unconstrained, and in the raw network it can make the
/// lookahead unbounded.
pub struct GreedyPolicy<'a, P: ?Sized> {
    problem: &'a P,
    value: &'a dyn ValueFunction,
    scheme: Expectation,
    solver: SolverConfig,
    anchor: Option<(Range<usize>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyAction {
    pub action: Vec<f64>,
    /// Lookahead objective at `action`, internal sense.
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

impl<'a, P: ControlProblem + ?Sized> GreedyPolicy<'a, P> {
    pub fn new(problem: &'a P, value: &'a dyn ValueFunction, scheme: Expectation, solver: SolverConfig) -> Self {
        let coords = problem.action_determined();
        let anchor = (!coords.is_empty()).then(|| (coords, problem.initial_state()));
        GreedyPolicy { problem, value, scheme, solver, anchor }
    }

    /// Continuation value at stage `t`, accumulating `scale · ∇_s` into `grad`.
    fn continuation(&self, t: usize, s: &[f64], scale: f64, grad: Option<&mut [f64]>) -> f64 {
        let Some((coords, s0)) = &self.anchor else {
            if let Some(g) = grad {
                self.value.grad_state(t, s, scale, g);
            }
            return self.value.value(t, s);
        };
        let mut bar = s0.clone();
        bar[coords.clone()].copy_from_slice(&s[coords.clone()]);
        let v = self.value.value(t, s) - self.value.value(t, &bar) + self.problem.deterministic_baseline(t, &bar);
        if let Some(g) = grad {
            self.value.grad_state(t, s, scale, g);
            let mut gb = vec![0.0; s.len()];
            self.value.grad_state(t, &bar, -scale, &mut gb);
            self.problem.deterministic_baseline_grad(t, &bar, scale, &mut gb);
            for i in coords.clone() {
                g[i] += gb[i];
            }
        }
        v
    }

    fn nodes(&self, t: usize, state: &[f64]) -> Result<QuadratureNodes> {
        QuadratureNodes::build(self.problem.noise(), self.scheme, Purpose::Greedy, hash_f64s(state), t as u64)
    }

    fn lookahead(&self, nodes: &QuadratureNodes, t: usize, s: &[f64], a: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = self.problem;
        let mut next = vec![0.0; s.len()];
        let mut obj = internal_stage_reward(p, t, s, a);
        for k in 0..nodes.len() {
            p.transition(t, s, a, nodes.point(k), &mut next);
            obj += nodes.weights[k] * self.continuation(t + 1, &next, 0.0, None);
        }
        if let Some(ga) = grad {
            ga.iter_mut().for_each(|g| *g = 0.0);
            let mut gs = vec![0.0; s.len()];
            let mut wg = vec![0.0; s.len()];
            p.stage_reward_grad(t, s, a, p.sense().sign(), &mut gs, ga);
            for k in 0..nodes.len() {
                p.transition(t, s, a, nodes.point(k), &mut next);
                wg.iter_mut().for_each(|g| *g = 0.0);
                self.continuation(t + 1, &next, nodes.weights[k], Some(&mut wg));
                p.transition_vjp(t, s, a, nodes.point(k), &wg, &mut gs, ga);
            }
        }
        obj
    }

    /// Solves the lookahead from the projected zero action and the nominal
    /// action. Exact ties go to the lexicographically smallest start.
    pub fn greedy_action(&self, t: usize, state: &[f64]) -> Result<GreedyAction> {
        let dims = self.problem.dims();
        if t >= dims.horizon {
            return Err(AdrlError::Range(format!("no decision at t = {t}")));
        }
        let nodes = self.nodes(t, state)?;
        let mut zero = vec![0.0; dims.action];
        self.problem.project_action(t, state, &mut zero);
        let mut nominal = self.problem.nominal_action(t, state);
        self.problem.project_action(t, state, &mut nominal);
        let mut starts = vec![zero, nominal];
        starts.sort_by(|a, b| {
            a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        starts.dedup();

        let mut best: Option<GreedyAction> = None;
        let mut converged = false;
        for x0 in &starts {
            let run = projected_ascent(
                x0,
                |a| self.lookahead(&nodes, t, state, a, None),
                |a, g| self.lookahead(&nodes, t, state, a, Some(g)),
                |a| self.problem.project_action(t, state, a),
                &self.solver,
            );
            converged |= run.residual <= self.solver.warn_tol;
            if best.as_ref().is_none_or(|b| run.value > b.objective) {
                best = Some(GreedyAction { action: run.x, objective: run.value, kkt_residual: run.residual, converged: false });
            }
        }
        let mut best = best.expect("at least one start");
        best.converged = converged;
        Ok(best)
    }
}

impl<P: ControlProblem + ?Sized> Policy for GreedyPolicy<'_, P> {
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.greedy_action(t, state)?.action)
    }
}
