use crate::control::{internal_terminal_reward, ControlProblem};
use crate::neural::GeneratingFunction;

/// A sequence of state functions `W_0..W_T` in the internal maximisation
/// sense.
pub trait ValueFunction: Sync {
    fn value(&self, t: usize, state: &[f64]) -> f64;

    /// Accumulates `scale · ∇_s W_t(s)`.
    fn grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]);

    /// `W_t(s)`, accumulating `scale · ∇_s W_t(s)` in the same pass.
    fn value_and_grad(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        self.grad_state(t, state, scale, grad);
        self.value(t, state)
    }
}

/// `W ≡ 0`: the perfect-information relaxation without penalty.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroValue;

impl ValueFunction for ZeroValue {
    fn value(&self, _t: usize, _state: &[f64]) -> f64 {
        0.0
    }

    fn grad_state(&self, _t: usize, _state: &[f64], _scale: f64, _grad: &mut [f64]) {}
}

/// Trained networks plus the problem's deterministic baseline, with `W_T`
/// replaced by the terminal reward when the generating function pins it.
pub struct NetworkValue<'a, P: ?Sized> {
    pub problem: &'a P,
    pub gen: &'a GeneratingFunction,
}

impl<'a, P: ControlProblem + ?Sized> NetworkValue<'a, P> {
    pub fn new(problem: &'a P, gen: &'a GeneratingFunction) -> Self {
        NetworkValue { problem, gen }
    }

    fn pinned(&self, t: usize) -> bool {
        t == self.gen.horizon() && self.gen.pin_terminal()
    }
}

impl<P: ControlProblem + ?Sized> ValueFunction for NetworkValue<'_, P> {
    fn value(&self, t: usize, state: &[f64]) -> f64 {
        if self.pinned(t) {
            internal_terminal_reward(self.problem, state)
        } else {
            self.gen.network_value(t, state) + self.problem.deterministic_baseline(t, state)
        }
    }

    fn grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) {
        if self.pinned(t) {
            self.problem.terminal_reward_grad(state, scale * self.problem.sense().sign(), grad);
        } else {
            self.gen.network_grad_state(t, state, scale, grad);
            self.problem.deterministic_baseline_grad(t, state, scale, grad);
        }
    }

    fn value_and_grad(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        if self.pinned(t) {
            self.grad_state(t, state, scale, grad);
            return self.value(t, state);
        }
        self.problem.deterministic_baseline_grad(t, state, scale, grad);
        self.gen.network_value_and_grad_state(t, state, scale, grad) + self.problem.deterministic_baseline(t, state)
    }
}

/// Plain closures `(t, s) -> W_t(s)` and `(t, s) -> ∇W_t(s)`.
pub struct FnValue<F, G> {
    pub value: F,
    pub grad: G,
}

impl<F, G> ValueFunction for FnValue<F, G>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
    G: Fn(usize, &[f64]) -> Vec<f64> + Sync,
{
    fn value(&self, t: usize, state: &[f64]) -> f64 {
        (self.value)(t, state)
    }

    fn grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) {
        for (g, d) in grad.iter_mut().zip((self.grad)(t, state)) {
            *g += scale * d;
        }
    }
}
