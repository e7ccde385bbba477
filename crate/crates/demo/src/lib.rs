//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function is a thin wrapper over a plain Rust function so the
//! numbers can be tested natively.

use adrl_core::bounds::{dp_oracle_discrete, exec_closed_form, GreedyPolicy, TabularValue};
use adrl_core::control::{enumerate_noise_dataset, evaluate_policy, sample_noise_dataset, ControlProblem};
use adrl_core::duality::{dual_value, Expectation, PenaltyContext, SolverConfig, ValueFunction};
use adrl_core::envs::{make_toy_chain_with, project_scaled_simplex, ToyTerminal, TradeExecModel, TradeExecution};
use adrl_core::Result;
use wasm_bindgen::prelude::*;

/// The oracle values multiplied by `scale`.
struct Scaled<'a> {
    inner: &'a TabularValue,
    scale: f64,
}

impl ValueFunction for Scaled<'_> {
    fn value(&self, t: usize, state: &[f64]) -> f64 {
        self.scale * self.inner.value(t, state)
    }

    fn grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) {
        self.inner.grad_state(t, state, self.scale * scale, grad);
    }
}

/// `[V*, dual, greedy primal]` on the toy chain with the penalty built from
/// `scale · V*`. Every number is an exact expectation over the noise tree.
pub fn toy_sandwich(horizon: usize, abs_terminal: bool, scale: f64) -> Result<[f64; 3]> {
    let terminal = if abs_terminal { ToyTerminal::Abs } else { ToyTerminal::Identity };
    let p = make_toy_chain_with(horizon, terminal)?;
    let oracle = dp_oracle_discrete(&p, 21)?;
    let table = oracle.tabular_value()?;
    let w = Scaled { inner: &table, scale };
    let ds = enumerate_noise_dataset(&p)?;
    let solver = SolverConfig { random_starts: 2, ..SolverConfig::default() };
    let ctx = PenaltyContext::new(&p, &w, Expectation::Exact)?;
    let dual = dual_value(&ctx, &p, &ds, &solver)?.native.mean;
    let greedy = GreedyPolicy::new(&p, &w, Expectation::Exact, solver);
    let primal = evaluate_policy(&p, &greedy, &ds)?.mean;
    Ok([oracle.initial_value(), dual, primal])
}

/// `[closed-form cost, uniform mean, uniform stderr, optimal mean, optimal
/// stderr]` for the pinned execution model without the no-shorting
/// constraint, simulated on `paths` common noise paths.
pub fn execution_costs(horizon: usize, paths: usize, seed: u64) -> Result<[f64; 5]> {
    let model = TradeExecModel::pinned_default(3, 2, horizon, false, 0)?;
    let cf = exec_closed_form(&model)?;
    let p = TradeExecution::new(model)?;
    let ds = sample_noise_dataset(&p, paths, paths, seed)?;
    let uniform = evaluate_policy(&p, &|t: usize, s: &[f64]| p.nominal_action(t, s), &ds)?;
    let optimal = evaluate_policy(&p, &cf, &ds)?;
    Ok([cf.cost, uniform.mean, uniform.stderr, optimal.mean, optimal.stderr])
}

fn js(e: adrl_core::AdrlError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = toySandwich)]
pub fn toy_sandwich_js(horizon: usize, abs_terminal: bool, scale: f64) -> std::result::Result<Vec<f64>, JsError> {
    toy_sandwich(horizon, abs_terminal, scale).map(|r| r.to_vec()).map_err(js)
}

#[wasm_bindgen(js_name = projectSimplex)]
pub fn project_simplex_js(mut values: Vec<f64>, total: f64) -> std::result::Result<Vec<f64>, JsError> {
    project_scaled_simplex(&mut values, total).map_err(js)?;
    Ok(values)
}

#[wasm_bindgen(js_name = executionCosts)]
pub fn execution_costs_js(horizon: usize, paths: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    execution_costs(horizon, paths, seed).map(|r| r.to_vec()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_scale_closes_the_gap() {
        let [v, d, p] = toy_sandwich(2, true, 1.0).unwrap();
        assert!((d - v).abs() < 1e-6 && (p - v).abs() < 1e-9, "{v} {d} {p}");
    }

    #[test]
    fn other_scales_bracket_the_optimum() {
        for scale in [0.0, 0.5, 1.5] {
            let [v, d, p] = toy_sandwich(3, true, scale).unwrap();
            assert!(p <= v + 1e-9 && v <= d + 1e-9, "scale {scale}: {p} {v} {d}");
        }
    }

    #[test]
    fn optimal_schedule_beats_uniform() {
        let [cf, u, _, o, se] = execution_costs(5, 2000, 1).unwrap();
        assert!((o - cf).abs() < 4.0 * se);
        assert!(o < u);
    }
}
