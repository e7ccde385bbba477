mod common;

use adrl_core::bounds::{
    bound_report, dp_oracle_discrete, exec_closed_form, uniform_schedule_cost, BoundConfig, BoundReport, GreedyPolicy,
};
use adrl_core::control::{enumerate_noise_dataset, evaluate_policy, Sense};
use adrl_core::duality::{Expectation, NetworkValue, SolverConfig, ValueFunction};
use adrl_core::envs::{make_toy_chain, make_toy_chain_with, ToyTerminal, TradeExecModel};
use adrl_core::rng::{stream, Purpose};
use adrl_core::stats::Estimate;
use common::random_toy_gen;
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::Rng;

fn exact() -> BoundConfig {
    BoundConfig { enumerate: true, inner: Expectation::Exact, greedy: Expectation::Exact, ..BoundConfig::default() }
}

#[test]
fn sandwich_on_toy_chains() {
    for terminal in [ToyTerminal::Identity, ToyTerminal::Abs] {
        let p = make_toy_chain_with(2, terminal).unwrap();
        let v_star = dp_oracle_discrete(&p, 21).unwrap().initial_value();
        for k in 0..4 {
            let gen = random_toy_gen(2, 5, 1.0, 200 + k);
            let value = NetworkValue::new(&p, &gen);
            let r = bound_report(&p, &value, &exact(), None).unwrap();
            assert!(r.primal.mean <= v_star + 1e-9, "primal {} > V* {v_star}", r.primal.mean);
            assert!(v_star <= r.dual.mean + 1e-9, "V* {v_star} > dual {}", r.dual.mean);
            assert!(!r.duality_violation);
        }
    }
}

#[test]
fn oracle_pinned_report_has_no_gap() {
    let p = make_toy_chain(2).unwrap();
    let oracle = dp_oracle_discrete(&p, 21).unwrap();
    let w = oracle.tabular_value().unwrap();
    let r = bound_report(&p, &w, &exact(), None).unwrap();
    assert!((r.dual.mean - oracle.initial_value()).abs() < 1e-6);
    assert!((r.primal.mean - oracle.initial_value()).abs() < 1e-6);
    assert!(r.gap.is_nan() || r.gap <= 1e-6 || r.dual.mean.abs() < 1e-12);
}

#[test]
fn greedy_at_the_oracle_fixed_point() {
    // linear terminal: the lookahead is linear in the action, so greedy is exact
    let p = make_toy_chain(3).unwrap();
    let oracle = dp_oracle_discrete(&p, 11).unwrap();
    let w = oracle.tabular_value().unwrap();
    let greedy = GreedyPolicy::new(&p, &w, Expectation::Exact, SolverConfig::default());
    let v = evaluate_policy(&p, &greedy, &enumerate_noise_dataset(&p).unwrap()).unwrap();
    assert!((v.mean - oracle.initial_value()).abs() < 1e-9);

    // abs terminal: the lookahead is convex in the action, so a local ascent
    // never beats the oracle's Q* but may stop at a stationary point
    let p = make_toy_chain_with(3, ToyTerminal::Abs).unwrap();
    let oracle = dp_oracle_discrete(&p, 11).unwrap();
    let w = oracle.tabular_value().unwrap();
    let greedy = GreedyPolicy::new(&p, &w, Expectation::Exact, SolverConfig::default());
    for t in 0..3 {
        for s in oracle.states(t) {
            let g = greedy.greedy_action(t, &s).unwrap();
            let a_star = oracle.action(t, &s).unwrap();
            let q = |a: f64| 0.5 * (w.value(t + 1, &[s[0] + a]) + w.value(t + 1, &[s[0] - a]));
            assert!(g.objective <= q(a_star[0]) + 1e-9, "t {t} s {s:?}");
            assert!((g.objective - q(g.action[0])).abs() < 1e-12);
            assert!(g.converged);
        }
    }
}

#[test]
fn closed_form_matches_uniform_formula() {
    let mut rng = stream(17, Purpose::Model, 0, 0);
    for _ in 0..50 {
        let theta = rng.random_range(0.01..1.0);
        let target = rng.random_range(0.5..20.0);
        let price = rng.random_range(1.0..100.0);
        let horizon = rng.random_range(1..=30);
        let model = TradeExecModel::single_asset(theta, target, price, horizon).unwrap();
        let cf = exec_closed_form(&model).unwrap();
        let formula = uniform_schedule_cost(theta, target, price, horizon);
        assert!((cf.cost - formula).abs() <= 1e-10 * formula.abs().max(1.0), "{} vs {formula}", cf.cost);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consistent_reports_have_bounded_negative_gap(
        dual in 50.0f64..150.0,
        diff in 0.0f64..10.0,
        se_d in 0.01f64..2.0,
        se_p in 0.01f64..2.0,
    ) {
        let r = BoundReport::assemble(
            Sense::Minimize,
            Estimate { mean: dual, stderr: se_d, count: 100 },
            Estimate { mean: dual + diff, stderr: se_p, count: 100 },
        );
        prop_assert!(r.signed_gap >= -4.0 * r.gap_stderr);
        prop_assert!(!r.duality_violation);
        prop_assert!((r.gap - diff / dual).abs() < 1e-12);
    }
}
