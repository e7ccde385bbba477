use std::collections::HashMap;

use crate::control::{internal_stage_reward, internal_terminal_reward, ControlProblem, NoiseModel, Policy, Sense};
use crate::duality::ValueFunction;
use crate::error::{AdrlError, Result};

pub const MAX_ORACLE_HORIZON: usize = 4;
pub const MAX_GRID_POINTS: usize = 21;
pub const MAX_ORACLE_NODES: usize = 10_000_000;

type StateKey = Vec<u64>;

fn key(s: &[f64]) -> StateKey {
    s.iter().map(|v| v.to_bits()).collect()
}

#[derive(Clone, Debug)]
struct Node {
    state: Vec<f64>,
    /// Internal sense.
    value: f64,
    action: Option<Vec<f64>>,
}

/// Exact backward induction over the reachable tree of a finite-noise
/// problem with a gridded action set.
#[derive(Clone, Debug)]
pub struct DpOracle {
    sense: Sense,
    horizon: usize,
    tables: Vec<HashMap<StateKey, Node>>,
    initial: Vec<f64>,
}

struct Builder<'p, P: ?Sized> {
    problem: &'p P,
    support: &'p [Vec<f64>],
    probs: &'p [f64],
    points: usize,
    tables: Vec<HashMap<StateKey, Node>>,
    nodes: usize,
}

impl<P: ControlProblem + ?Sized> Builder<'_, P> {
    fn solve(&mut self, t: usize, s: &[f64]) -> Result<f64> {
        let k = key(s);
        if let Some(n) = self.tables[t].get(&k) {
            return Ok(n.value);
        }
        self.nodes += 1;
        if self.nodes > MAX_ORACLE_NODES {
            return Err(AdrlError::config("reachable tree exceeds the oracle node limit"));
        }
        let horizon = self.tables.len() - 1;
        let node = if t == horizon {
            Node { state: s.to_vec(), value: internal_terminal_reward(self.problem, s), action: None }
        } else {
            let grid = self.problem.action_grid(t, s, self.points)?;
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut next = vec![0.0; s.len()];
            for a in grid {
                let mut q = internal_stage_reward(self.problem, t, s, &a);
                for (xi, p) in self.support.iter().zip(self.probs) {
                    self.problem.transition(t, s, &a, xi, &mut next);
                    let v = self.solve(t + 1, &next.clone())?;
                    q += p * v;
                }
                if best.as_ref().is_none_or(|(b, _)| q > *b) {
                    best = Some((q, a));
                }
            }
            let (value, action) = best.ok_or_else(|| AdrlError::config("empty action grid"))?;
            Node { state: s.to_vec(), value, action: Some(action) }
        };
        let v = node.value;
        self.tables[t].insert(k, node);
        Ok(v)
    }
}

/// Backward induction from `s_0` over every state reachable with the
/// action grid. Ties go to the smallest grid index.
pub fn dp_oracle_discrete<P: ControlProblem + ?Sized>(problem: &P, grid_points: usize) -> Result<DpOracle> {
    let NoiseModel::Finite { support, probs } = problem.noise() else {
        return Err(AdrlError::Unsupported("the oracle needs finite-support noise".into()));
    };
    let horizon = problem.dims().horizon;
    if horizon > MAX_ORACLE_HORIZON {
        return Err(AdrlError::config(format!("oracle horizon limited to {MAX_ORACLE_HORIZON}")));
    }
    if !(2..=MAX_GRID_POINTS).contains(&grid_points) {
        return Err(AdrlError::config(format!("grid must have 2..={MAX_GRID_POINTS} points per dimension")));
    }
    let mut b = Builder {
        problem,
        support,
        probs,
        points: grid_points,
        tables: vec![HashMap::new(); horizon + 1],
        nodes: 0,
    };
    let s0 = problem.initial_state();
    b.solve(0, &s0)?;
    Ok(DpOracle { sense: problem.sense(), horizon, tables: b.tables, initial: s0 })
}

impl DpOracle {
    /// `V*_0(s_0)`, native sense.
    pub fn initial_value(&self) -> f64 {
        self.value(0, &self.initial).expect("root is solved")
    }

    /// `V*_t(s)` at a reachable state, native sense.
    pub fn value(&self, t: usize, s: &[f64]) -> Option<f64> {
        self.tables.get(t)?.get(&key(s)).map(|n| self.sense.sign() * n.value)
    }

    pub fn action(&self, t: usize, s: &[f64]) -> Option<&[f64]> {
        self.tables.get(t)?.get(&key(s))?.action.as_deref()
    }

    /// Reachable states at stage `t`, sorted.
    pub fn states(&self, t: usize) -> Vec<Vec<f64>> {
        let mut v: Vec<Vec<f64>> = self.tables[t].values().map(|n| n.state.clone()).collect();
        v.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        v
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    /// `V*` as a generating function: piecewise-linear in a scalar state
    /// between reachable states, extended linearly outside them.
    pub fn tabular_value(&self) -> Result<TabularValue> {
        let mut knots = Vec::with_capacity(self.horizon + 1);
        for t in 0..=self.horizon {
            let mut pts: Vec<(f64, f64)> = Vec::new();
            for n in self.tables[t].values() {
                if n.state.len() != 1 {
                    return Err(AdrlError::Unsupported("tabular values need a scalar state".into()));
                }
                pts.push((n.state[0], n.value));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            knots.push(pts);
        }
        Ok(TabularValue { knots })
    }
}

impl Policy for DpOracle {
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.action(t, state).map(<[f64]>::to_vec).ok_or_else(|| AdrlError::Evaluation {
            t,
            state: state.to_vec(),
            msg: "state not in the oracle's reachable set".into(),
        })
    }
}

/// Piecewise-linear interpolant of a scalar-state value table (internal
/// sense).
#[derive(Clone, Debug, PartialEq)]
pub struct TabularValue {
    knots: Vec<Vec<(f64, f64)>>,
}

impl TabularValue {
    fn segment(&self, t: usize, x: f64) -> (f64, f64) {
        let k = &self.knots[t];
        match k.len() {
            0 => (0.0, 0.0),
            1 => (k[0].1, 0.0),
            len => {
                let i = k.partition_point(|p| p.0 <= x).clamp(1, len - 1);
                let (x0, y0) = k[i - 1];
                let (x1, y1) = k[i];
                let slope = (y1 - y0) / (x1 - x0);
                (y0 + slope * (x - x0), slope)
            }
        }
    }
}

impl ValueFunction for TabularValue {
    fn value(&self, t: usize, state: &[f64]) -> f64 {
        self.segment(t, state[0]).0
    }

    fn grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) {
        grad[0] += scale * self.segment(t, state[0]).1;
    }
}
