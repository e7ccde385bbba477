use crate::control::{ConstraintResiduals, ControlProblem, Dims, NoiseModel, Sense};
use crate::error::{AdrlError, Result};

/// Terminal reward shape for the toy chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTerminal {
    /// `R(s) = s`
    Identity,
    /// `R(s) = |s|`
    Abs,
}

/// Scalar chain `s_{t+1} = s_t + a_t ξ_{t+1}` with `a_t ∈ [0, 1]`,
/// `ξ ∈ {-1, +1}` equiprobable, zero stage rewards and `s_0 = 0`.
///
/// Small enough to enumerate exactly (`2^T` noise paths).
#[derive(Clone, Debug)]
pub struct ToyChain {
    horizon: usize,
    terminal: ToyTerminal,
    noise: NoiseModel,
}

pub const MAX_TOY_HORIZON: usize = 4;

/// Single-stage instance.
pub fn make_toy_t1() -> ToyChain {
    make_toy_chain(1).expect("T = 1 is valid")
}

pub fn make_toy_chain(horizon: usize) -> Result<ToyChain> {
    make_toy_chain_with(horizon, ToyTerminal::Identity)
}

pub fn make_toy_chain_with(horizon: usize, terminal: ToyTerminal) -> Result<ToyChain> {
    if horizon == 0 || horizon > MAX_TOY_HORIZON {
        return Err(AdrlError::config(format!(
            "toy chain horizon must be in 1..={MAX_TOY_HORIZON}, got {horizon}"
        )));
    }
    let noise = NoiseModel::finite(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5])?;
    Ok(ToyChain { horizon, terminal, noise })
}

impl ToyChain {
    pub fn terminal(&self) -> ToyTerminal {
        self.terminal
    }
}

impl ControlProblem for ToyChain {
    fn dims(&self) -> Dims {
        Dims { horizon: self.horizon, state: 1, action: 1, noise: 1 }
    }

    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn transition(&self, _t: usize, s: &[f64], a: &[f64], xi: &[f64], next: &mut [f64]) {
        next[0] = s[0] + a[0] * xi[0];
    }

    fn transition_vjp(
        &self,
        _t: usize,
        _s: &[f64],
        _a: &[f64],
        xi: &[f64],
        cot: &[f64],
        gs: &mut [f64],
        ga: &mut [f64],
    ) {
        gs[0] += cot[0];
        ga[0] += cot[0] * xi[0];
    }

    fn stage_reward(&self, _t: usize, _s: &[f64], _a: &[f64]) -> f64 {
        0.0
    }

    fn stage_reward_grad(&self, _: usize, _: &[f64], _: &[f64], _: f64, _: &mut [f64], _: &mut [f64]) {}

    fn terminal_reward(&self, s: &[f64]) -> f64 {
        match self.terminal {
            ToyTerminal::Identity => s[0],
            ToyTerminal::Abs => s[0].abs(),
        }
    }

    fn terminal_reward_grad(&self, s: &[f64], scale: f64, g: &mut [f64]) {
        g[0] += scale
            * match self.terminal {
                ToyTerminal::Identity => 1.0,
                ToyTerminal::Abs => {
                    if s[0] > 0.0 {
                        1.0
                    } else if s[0] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
    }

    fn constraints(&self, _t: usize, _s: &[f64], a: &[f64]) -> ConstraintResiduals {
        ConstraintResiduals { equalities: vec![], inequalities: vec![a[0], 1.0 - a[0]] }
    }

    fn project_action(&self, _t: usize, _s: &[f64], a: &mut [f64]) {
        a[0] = a[0].clamp(0.0, 1.0);
    }

    fn project_schedule(&self, schedule: &mut [f64]) {
        for a in schedule.iter_mut() {
            *a = a.clamp(0.0, 1.0);
        }
    }

    fn schedule_violation(&self, schedule: &[f64]) -> f64 {
        schedule.iter().fold(0.0_f64, |m, a| m.max(-a).max(a - 1.0))
    }

    fn nominal_schedule(&self) -> Vec<f64> {
        vec![0.5; self.horizon]
    }

    fn nominal_action(&self, _t: usize, _s: &[f64]) -> Vec<f64> {
        vec![0.5]
    }

    fn random_schedule(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        use rand::Rng;
        (0..self.horizon).map(|_| rng.random::<f64>()).collect()
    }

    fn action_grid(&self, _t: usize, _s: &[f64], points: usize) -> Result<Vec<Vec<f64>>> {
        if points < 2 {
            return Err(AdrlError::config("action grid needs at least 2 points"));
        }
        Ok((0..points).map(|i| vec![i as f64 / (points - 1) as f64]).collect())
    }
}
