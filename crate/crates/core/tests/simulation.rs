use adrl_core::control::{
    enumerate_noise_dataset, evaluate_policy, rollout, sample_noise_dataset, ControlProblem, NoiseDataset,
};
use adrl_core::envs::{
    make_toy_chain, project_hyperplane, project_scaled_simplex, TradeExecModel, TradeExecution,
};
use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

/// Projection onto `{x ≥ 0, Σx = c}` by enumerating supports.
fn simplex_brute_force(v: &[f64], c: f64) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let shift = (support.iter().map(|&i| v[i]).sum::<f64>() - c) / support.len() as f64;
        let mut x = vec![0.0; n];
        for &i in &support {
            x[i] = v[i] - shift;
        }
        if x.iter().any(|&xi| xi < -1e-12) {
            continue;
        }
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.expect("the simplex is non-empty").1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_projection_matches_brute_force(
        v in prop::collection::vec(-20.0f64..20.0, 1..=6),
        c in 0.0f64..30.0,
    ) {
        let mut x = v.clone();
        project_scaled_simplex(&mut x, c).unwrap();
        let oracle = simplex_brute_force(&v, c);
        for (a, b) in x.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-8, "{x:?} vs {oracle:?}");
        }
    }

    #[test]
    fn hyperplane_projection_is_orthogonal(v in prop::collection::vec(-20.0f64..20.0, 1..=6), c in -30.0f64..30.0) {
        let mut x = v.clone();
        project_hyperplane(&mut x, c);
        prop_assert!((x.iter().sum::<f64>() - c).abs() < 1e-9);
        let shift: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - b).collect();
        prop_assert!(shift.iter().all(|s| (s - shift[0]).abs() < 1e-9));
    }

    #[test]
    fn rollout_total_is_the_sum_of_its_parts(seed in 0u64..1000, frac in 0.0f64..1.0) {
        let model = TradeExecModel::pinned_default(2, 2, 4, true, seed).unwrap();
        let p = TradeExecution::new(model).unwrap();
        let ds = sample_noise_dataset(&p, 1, 1, seed).unwrap();
        let policy = |t: usize, s: &[f64]| -> Vec<f64> {
            let r = &s[4..6];
            if t == 3 { r.to_vec() } else { r.iter().map(|x| frac * x).collect() }
        };
        let tr = rollout(&p, &policy, &ds.paths()[0]).unwrap();
        let recomputed: f64 = (0..4).map(|t| p.stage_reward(t, &tr.states[t], &tr.actions[t])).sum::<f64>()
            + p.terminal_reward(&tr.states[4]);
        prop_assert!((tr.total - recomputed).abs() < 1e-9);
        prop_assert_eq!(tr.states.len(), 5);
        // everything is sold by the end
        prop_assert!(tr.states[4][4..6].iter().all(|r| r.abs() < 1e-9));
        for t in 0..4 {
            let mut next = vec![0.0; p.dims().state];
            p.transition(t, &tr.states[t], &tr.actions[t], ds.paths()[0].noise_at(t), &mut next);
            prop_assert_eq!(&next, &tr.states[t + 1]);
        }
    }
}

#[test]
fn enumerated_expectation_matches_direct_sum() {
    let p = make_toy_chain(3).unwrap();
    let ds = enumerate_noise_dataset(&p).unwrap();
    assert_eq!(ds.len(), 8);
    assert!((ds.weights().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    // a(s) = 1 if s ≥ 0 else 0.5; terminal reward s
    let policy = |_: usize, s: &[f64]| vec![if s[0] >= 0.0 { 1.0 } else { 0.5 }];
    let mut direct = 0.0;
    for bits in 0..8u32 {
        let mut s = 0.0;
        for t in 0..3 {
            let xi = if bits & (1 << t) != 0 { 1.0 } else { -1.0 };
            s += policy(t, &[s])[0] * xi;
        }
        direct += s / 8.0;
    }
    let e = evaluate_policy(&p, &policy, &ds).unwrap();
    assert!((e.mean - direct).abs() < 1e-15);
    assert_eq!(e.stderr, 0.0);
}

#[test]
fn dataset_files_round_trip() {
    let model = TradeExecModel::scaled_down(true).unwrap();
    let p = TradeExecution::new(model).unwrap();
    let ds = sample_noise_dataset(&p, 6, 3, 8).unwrap();
    let mut csv = Vec::new();
    ds.write_csv(&mut csv).unwrap();
    let back = NoiseDataset::read_csv(csv.as_slice()).unwrap();
    assert_eq!(back.paths(), ds.paths());
    let mut bin = Vec::new();
    ds.write_binary(&mut bin).unwrap();
    let back = NoiseDataset::read_binary(bin.as_slice()).unwrap();
    assert_eq!(back.paths(), ds.paths());
}

#[test]
fn sampled_datasets_are_reproducible() {
    let model = TradeExecModel::scaled_down(true).unwrap();
    let p = TradeExecution::new(model).unwrap();
    let a = sample_noise_dataset(&p, 10, 5, 3).unwrap();
    let b = sample_noise_dataset(&p, 10, 5, 3).unwrap();
    let c = sample_noise_dataset(&p, 10, 5, 4).unwrap();
    assert_eq!(a.paths(), b.paths());
    assert_ne!(a.paths(), c.paths());
}
