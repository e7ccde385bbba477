//! Invariant checks on exactly enumerable problems.

use std::fmt::Write as _;

use adrl_core::bounds::{dp_oracle_discrete, exec_closed_form, GreedyPolicy};
use adrl_core::control::{enumerate_noise_dataset, evaluate_policy, rollout, ControlProblem};
use adrl_core::duality::{dual_value, Expectation, FnValue, NetworkValue, PenaltyContext, SolverConfig, ValueFunction};
use adrl_core::envs::{make_toy_chain_with, make_toy_t1, project_scaled_simplex, ToyChain, ToyTerminal, TradeExecModel};
use adrl_core::neural::{Activation, FeatureMap, GeneratingFunction};
use adrl_core::rng::{standard_normal, stream, Purpose};
use adrl_core::Result;
use rand::Rng;

pub struct SuiteReport {
    pub text: String,
    pub total: usize,
    pub failed: usize,
}

/// Softplus network values (8 hidden units) with every parameter drawn from `N(0, scale²)`.
pub fn random_generating_function(horizon: usize, seed: u64, scale: f64) -> Result<GeneratingFunction> {
    let mut gen =
        GeneratingFunction::initialized(horizon, FeatureMap::Identity { dim: 1 }, 8, 1, Activation::Softplus, false, seed)?;
    let mut rng = stream(seed, Purpose::Init, 1 << 32, 0);
    let params: Vec<f64> = (0..gen.param_count()).map(|_| scale * standard_normal(&mut rng)).collect();
    gen.set_params(&params)?;
    Ok(gen)
}

/// `a_t = sigmoid(c_0 + c_1 s + c_2 t)`, always inside `[0, 1]`.
fn random_feedback(seed: u64) -> impl Fn(usize, &[f64]) -> Vec<f64> + Sync {
    let mut rng = stream(seed, Purpose::Init, 1 << 33, 0);
    let c: [f64; 3] = [standard_normal(&mut rng), 2.0 * standard_normal(&mut rng), standard_normal(&mut rng)];
    move |t: usize, s: &[f64]| vec![1.0 / (1.0 + (-(c[0] + c[1] * s[0] + c[2] * t as f64)).exp())]
}

/// Enumerated `E[Σ_t z_t]` along the rollouts of `policy`.
fn expected_penalty<Q: Fn(usize, &[f64]) -> Vec<f64> + Sync>(p: &ToyChain, value: &dyn ValueFunction, policy: &Q) -> Result<f64> {
    let ctx = PenaltyContext::new(p, value, Expectation::Exact)?;
    let ds = enumerate_noise_dataset(p)?;
    let weights = ds.weights().expect("enumerated weights");
    let mut total = 0.0;
    for (path, w) in ds.paths().iter().zip(weights) {
        let tr = rollout(p, policy, path)?;
        for t in 0..p.dims().horizon {
            total += w * ctx.penalty_term(p, t, &tr.states[t], &tr.actions[t], &tr.states[t + 1])?;
        }
    }
    Ok(total)
}

fn exact_dual(p: &ToyChain, value: &dyn ValueFunction) -> Result<adrl_core::duality::DualEstimate> {
    let ctx = PenaltyContext::new(p, value, Expectation::Exact)?;
    dual_value(&ctx, p, &enumerate_noise_dataset(p)?, &SolverConfig::default())
}

fn chains() -> Result<Vec<(&'static str, ToyChain)>> {
    Ok(vec![
        ("identity", make_toy_chain_with(2, ToyTerminal::Identity)?),
        ("abs", make_toy_chain_with(2, ToyTerminal::Abs)?),
    ])
}

type Check = fn() -> Result<(bool, String)>;

fn toy_t1_duals() -> Result<(bool, String)> {
    let p = make_toy_t1();
    let zero = exact_dual(&p, &adrl_core::duality::ZeroValue)?.native.mean;
    let ident = FnValue { value: |_: usize, s: &[f64]| s[0], grad: |_: usize, _: &[f64]| vec![1.0] };
    let half = FnValue { value: |_: usize, s: &[f64]| 0.5 * s[0], grad: |_: usize, _: &[f64]| vec![0.5] };
    let d1 = exact_dual(&p, &ident)?;
    let d2 = exact_dual(&p, &half)?.native.mean;
    let ok = zero == 0.5 && d1.native.mean == 0.0 && d1.native.stderr == 0.0 && (d2 - 0.25).abs() < 1e-15;
    Ok((ok, format!("W=0: {zero:?}, W=s: {:?}, W=s/2: {d2:?}", d1.native.mean)))
}

fn oracle_values() -> Result<(bool, String)> {
    let a = dp_oracle_discrete(&make_toy_t1(), 21)?.initial_value();
    let b = dp_oracle_discrete(&make_toy_chain_with(2, ToyTerminal::Identity)?, 21)?.initial_value();
    let c = dp_oracle_discrete(&make_toy_chain_with(1, ToyTerminal::Abs)?, 21)?.initial_value();
    Ok((a == 0.0 && b.abs() < 1e-12 && c == 1.0, format!("toy-t1 {a:?}, chain(2) {b:?}, abs chain(1) {c:?}")))
}

fn penalty_feasibility() -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    for (_, p) in chains()? {
        for k in 0..20 {
            let gen = random_generating_function(2, 1000 + k, 1.0)?;
            let value = NetworkValue::new(&p, &gen);
            for j in 0..20 {
                worst = worst.max(expected_penalty(&p, &value, &random_feedback(2000 + 20 * k + j))?.abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("max |E[sum z]| = {worst:e} over 800 (policy, W) pairs")))
}

fn weak_duality() -> Result<(bool, String)> {
    let mut slack = f64::INFINITY;
    for (_, p) in chains()? {
        let v_star = dp_oracle_discrete(&p, 21)?.initial_value();
        for k in 0..50 {
            let gen = random_generating_function(2, 3000 + k, 1.0)?;
            let d = exact_dual(&p, &NetworkValue::new(&p, &gen))?.native.mean;
            slack = slack.min(d - v_star);
        }
    }
    Ok((slack >= -1e-9, format!("min(dual - V*) = {slack:e} over 100 random W")))
}

fn strong_duality() -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    let mut var = 0.0_f64;
    for (_, p) in chains()? {
        let oracle = dp_oracle_discrete(&p, 21)?;
        let w = oracle.tabular_value()?;
        let d = exact_dual(&p, &w)?;
        for y in &d.per_path {
            worst = worst.max((y - oracle.initial_value()).abs());
        }
        var = var.max(d.variance());
    }
    Ok((worst <= 1e-6 && var < 1e-10, format!("max |Y* - V*| = {worst:e}, variance {var:e}")))
}

fn sandwich() -> Result<(bool, String)> {
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for (_, p) in chains()? {
        let v_star = dp_oracle_discrete(&p, 21)?.initial_value();
        let ds = enumerate_noise_dataset(&p)?;
        for k in 0..10 {
            let gen = random_generating_function(2, 4000 + k, 1.0)?;
            let value = NetworkValue::new(&p, &gen);
            let dual = exact_dual(&p, &value)?.native.mean;
            let greedy = GreedyPolicy::new(&p, &value, Expectation::Exact, SolverConfig::default());
            let primal = evaluate_policy(&p, &greedy, &ds)?.mean;
            ok &= primal <= v_star + 1e-9 && v_star <= dual + 1e-9;
            worst = worst.min((v_star - primal).min(dual - v_star));
        }
    }
    Ok((ok, format!("min slack {worst:e} over 20 random W")))
}

fn closed_form() -> Result<(bool, String)> {
    let two = exec_closed_form(&TradeExecModel::single_asset(0.1, 1.0, 10.0, 2)?)?.cost;
    let one = exec_closed_form(&TradeExecModel::single_asset(0.3, 2.0, 7.0, 1)?)?.cost;
    let ok = (two - 10.075).abs() < 1e-12 && (one - 15.2).abs() < 1e-12;
    Ok((ok, format!("T=2: {two:?}, T=1: {one:?}")))
}

fn simplex_projection() -> Result<(bool, String)> {
    let mut rng = stream(5, Purpose::Init, 1 << 34, 0);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let v: Vec<f64> = (0..n).map(|_| 4.0 * standard_normal(&mut rng)).collect();
        let c = rng.random_range(0.0..5.0);
        let mut x = v.clone();
        project_scaled_simplex(&mut x, c)?;
        // optimality: x feasible and v - x = λ on the support, ≤ λ off it
        let support: Vec<usize> = (0..n).filter(|&i| x[i] > 1e-12).collect();
        let lambda = support.first().map_or(f64::NEG_INFINITY, |&i| v[i] - x[i]);
        let mut err = (x.iter().sum::<f64>() - c).abs();
        for i in 0..n {
            err = err.max((-x[i]).max(0.0));
            if support.contains(&i) {
                err = err.max((v[i] - x[i] - lambda).abs());
            } else if c > 0.0 {
                err = err.max((v[i] - lambda).max(0.0));
            }
        }
        worst = worst.max(err);
    }
    Ok((worst <= 1e-9, format!("max KKT error {worst:e} over 200 instances")))
}

const CHECKS: &[(&str, Check)] = &[
    ("toy_t1_dual_values", toy_t1_duals),
    ("oracle_values", oracle_values),
    ("penalty_feasibility", penalty_feasibility),
    ("weak_duality", weak_duality),
    ("strong_duality", strong_duality),
    ("sandwich", sandwich),
    ("closed_form", closed_form),
    ("simplex_projection", simplex_projection),
];

pub fn run_suite() -> SuiteReport {
    let mut text = String::new();
    let mut failed = 0;
    for (name, check) in CHECKS {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        let _ = writeln!(text, "{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    let _ = writeln!(text, "selftest: {}/{} checks passed", CHECKS.len() - failed, CHECKS.len());
    SuiteReport { text, total: CHECKS.len(), failed }
}
