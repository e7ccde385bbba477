use std::fmt::Write as _;

use super::report::BoundReport;
use crate::control::{evaluate_policy, sample_noise_dataset, ControlProblem, NoiseDataset, NoisePath, Policy, Sense};
use crate::envs::TradeExecution;
use crate::error::{AdrlError, Result};
use crate::neural::{backward_tape, forward_tape, Activation, AdamState, Architecture, FeatureMap, Tape};
use crate::parallel::map_indexed;
use crate::rng::{stream, Purpose};
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DermOptimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DermConfig {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: DermOptimizer,
    /// Out-of-sample evaluation cadence in iterations (0 disables; the final
    /// iterate is always evaluated when `eval_paths > 0`).
    pub eval_every: usize,
    pub eval_paths: usize,
    pub eval_seed: u64,
    pub seed: u64,
    /// ADRL dual bound used to flag in-sample overfitting.
    pub dual_bound: Option<f64>,
}

impl Default for DermConfig {
    fn default() -> Self {
        DermConfig {
            width: 256,
            depth: 2,
            activation: Activation::Relu,
            iterations: 1000,
            learning_rate: 1e-3,
            optimizer: DermOptimizer::Adam,
            eval_every: 50,
            eval_paths: 1000,
            eval_seed: 77,
            seed: 7,
            dual_bound: None,
        }
    }
}

/// Feedback policy networks, one per free stage. At stage `t < T-1` the
/// network output `u` sets `a_t = R_t ⊙ sigmoid(u)`; the last stage trades
/// the remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct DermPolicy {
    n_assets: usize,
    signal_dim: usize,
    horizon: usize,
    features: FeatureMap,
    arch: Architecture,
    params: Vec<Vec<f64>>,
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl DermPolicy {
    /// Random hidden layers and a zero output layer whose bias makes the
    /// initial policy the uniform schedule.
    pub fn initialized(problem: &TradeExecution, width: usize, depth: usize, activation: Activation, seed: u64) -> Self {
        let model = problem.model();
        let features = FeatureMap::for_exec(model);
        let arch = Architecture::new(features.output_dim(), width, depth, model.n_assets, activation);
        let horizon = model.horizon;
        let (_, bias_at) = *arch.offsets().last().expect("output layer");
        let params = (0..horizon.saturating_sub(1))
            .map(|t| {
                let mut p = arch.init(&mut stream(seed, Purpose::Derm, t as u64, 0), true);
                let frac = 1.0 / (horizon - t) as f64;
                for b in &mut p[bias_at..bias_at + model.n_assets] {
                    *b = (frac / (1.0 - frac)).ln();
                }
                p
            })
            .collect();
        DermPolicy { n_assets: model.n_assets, signal_dim: model.signal_dim, horizon, features, arch, params }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    fn remaining<'s>(&self, s: &'s [f64]) -> &'s [f64] {
        let at = self.n_assets + self.signal_dim;
        &s[at..at + self.n_assets]
    }

    /// Total cost along `path` and, when `grad` is given, its gradient with
    /// respect to every stage's parameters (accumulated).
    fn path_loss(&self, problem: &TradeExecution, path: &NoisePath, grad: Option<&mut [Vec<f64>]>) -> f64 {
        let dims = problem.dims();
        let n = self.n_assets;
        let r_at = n + self.signal_dim;
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut actions = Vec::with_capacity(self.horizon);
        let mut tapes = Vec::with_capacity(self.horizon);
        let mut feat = Vec::new();
        let mut s = problem.initial_state();
        let mut loss = 0.0;
        for t in 0..self.horizon {
            let r = self.remaining(&s);
            let a: Vec<f64> = if t + 1 < self.horizon {
                self.features.apply(&s, &mut feat);
                let mut tape = Tape::default();
                let u = forward_tape(&self.arch, &self.params[t], &feat, &mut tape);
                let a = r.iter().zip(u).map(|(ri, ui)| ri * sigmoid(*ui)).collect();
                tapes.push(tape);
                a
            } else {
                r.to_vec()
            };
            loss += problem.stage_reward(t, &s, &a);
            let mut next = vec![0.0; dims.state];
            problem.transition(t, &s, &a, path.noise_at(t), &mut next);
            states.push(std::mem::replace(&mut s, next));
            actions.push(a);
        }
        loss += problem.terminal_reward(&s);
        let Some(grad) = grad else {
            return loss;
        };

        let mut lambda = vec![0.0; dims.state];
        problem.terminal_reward_grad(&s, 1.0, &mut lambda);
        let mut du = vec![0.0; n];
        let mut gf = vec![0.0; self.features.output_dim()];
        for t in (0..self.horizon).rev() {
            let (st, a) = (&states[t], &actions[t]);
            let mut gs = vec![0.0; dims.state];
            let mut ga = vec![0.0; n];
            problem.stage_reward_grad(t, st, a, 1.0, &mut gs, &mut ga);
            problem.transition_vjp(t, st, a, path.noise_at(t), &lambda, &mut gs, &mut ga);
            if t + 1 < self.horizon {
                let tape = &mut tapes[t];
                for i in 0..n {
                    let sig = sigmoid(tape.output()[i]);
                    gs[r_at + i] += ga[i] * sig;
                    du[i] = ga[i] * st[r_at + i] * sig * (1.0 - sig);
                }
                gf.iter_mut().for_each(|g| *g = 0.0);
                backward_tape(&self.arch, &self.params[t], tape, &du, Some(&mut grad[t]), Some(&mut gf));
                self.features.vjp(st, &gf, &mut gs);
            } else {
                for i in 0..n {
                    gs[r_at + i] += ga[i];
                }
            }
            lambda = gs;
        }
        loss
    }

    /// Mean in-sample loss and its gradient over `dataset`.
    pub fn loss_and_grad(&self, problem: &TradeExecution, dataset: &NoiseDataset) -> (f64, Vec<Vec<f64>>) {
        let per_path = map_indexed(dataset.len(), |i| {
            let mut g: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
            let l = self.path_loss(problem, &dataset.paths()[i], Some(&mut g));
            (l, g)
        });
        let scale = 1.0 / dataset.len() as f64;
        let mut grad: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut loss = 0.0;
        for (l, g) in per_path {
            loss += l * scale;
            for (acc, gt) in grad.iter_mut().zip(g) {
                acc.iter_mut().zip(gt).for_each(|(a, v)| *a += v * scale);
            }
        }
        (loss, grad)
    }

    pub fn loss(&self, problem: &TradeExecution, dataset: &NoiseDataset) -> f64 {
        let per_path = map_indexed(dataset.len(), |i| self.path_loss(problem, &dataset.paths()[i], None));
        per_path.iter().sum::<f64>() / dataset.len() as f64
    }
}

impl Policy for DermPolicy {
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        if t >= self.horizon {
            return Err(AdrlError::Range(format!("no decision at t = {t}")));
        }
        let r = self.remaining(state);
        if t + 1 == self.horizon {
            return Ok(r.to_vec());
        }
        let mut feat = Vec::new();
        self.features.apply(state, &mut feat);
        let mut tape = Tape::default();
        let u = forward_tape(&self.arch, &self.params[t], &feat, &mut tape);
        Ok(r.iter().zip(u).map(|(ri, ui)| ri * sigmoid(*ui)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DermRecord {
    pub iteration: usize,
    pub train_loss: f64,
    /// Held-out cost on fresh paths, when evaluated at this iteration.
    pub eval: Option<Estimate>,
}

#[derive(Clone, Debug)]
pub struct DermRun {
    pub policy: DermPolicy,
    pub records: Vec<DermRecord>,
    /// First iteration whose in-sample loss fell below the supplied dual bound.
    pub overfit_at: Option<usize>,
    /// Set when training stopped on a non-finite loss.
    pub halted: Option<String>,
}

impl DermRun {
    /// `iteration,train_loss,eval_mean,eval_stderr` rows; the evaluation
    /// columns are empty when not evaluated.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,eval_mean,eval_stderr\n");
        for r in &self.records {
            let _ = write!(out, "{},{:?},", r.iteration, r.train_loss);
            match &r.eval {
                Some(e) => {
                    let _ = writeln!(out, "{:?},{:?}", e.mean, e.stderr);
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn train_trace(&self) -> Vec<(usize, f64)> {
        self.records.iter().map(|r| (r.iteration, r.train_loss)).collect()
    }
}

/// Trains the policy networks by full-batch gradient descent on the mean
/// cost over the fixed `dataset`, differentiating exactly through the
/// rollout.
pub fn derm_train(problem: &TradeExecution, dataset: &NoiseDataset, cfg: &DermConfig) -> Result<DermRun> {
    if dataset.is_empty() {
        return Err(AdrlError::config("DERM needs a non-empty dataset"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(AdrlError::config("learning rate must be positive"));
    }
    let mut policy = DermPolicy::initialized(problem, cfg.width, cfg.depth, cfg.activation, cfg.seed);
    let eval_ds = if cfg.eval_paths > 0 {
        Some(sample_noise_dataset(problem, cfg.eval_paths, cfg.eval_paths, cfg.eval_seed)?)
    } else {
        None
    };
    let mut adam: Vec<AdamState> = policy.params.iter().map(|p| AdamState::new(p.len())).collect();
    let mut records = Vec::with_capacity(cfg.iterations + 1);
    let mut overfit_at = None;
    let mut halted = None;
    for k in 0..=cfg.iterations {
        let (loss, grad) = if k < cfg.iterations {
            policy.loss_and_grad(problem, dataset)
        } else {
            (policy.loss(problem, dataset), Vec::new())
        };
        if !loss.is_finite() {
            halted = Some(format!("non-finite in-sample loss at iteration {k}"));
            break;
        }
        let evaluate = eval_ds.is_some() && (k == cfg.iterations || (cfg.eval_every > 0 && k % cfg.eval_every == 0));
        let eval = match (&eval_ds, evaluate) {
            (Some(ds), true) => Some(evaluate_policy(problem, &policy, ds)?),
            _ => None,
        };
        if overfit_at.is_none() && cfg.dual_bound.is_some_and(|d| loss < d) {
            overfit_at = Some(k);
        }
        records.push(DermRecord { iteration: k, train_loss: loss, eval });
        if k == cfg.iterations {
            break;
        }
        for ((p, g), st) in policy.params.iter_mut().zip(&grad).zip(&mut adam) {
            match cfg.optimizer {
                DermOptimizer::Adam => st.update(p, g, cfg.learning_rate, None)?,
                DermOptimizer::Sgd => p.iter_mut().zip(g).for_each(|(v, gv)| *v -= cfg.learning_rate * gv),
            }
        }
    }
    Ok(DermRun { policy, records, overfit_at, halted })
}

/// Outcome of the bracketing stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRecommendation {
    /// Earliest recorded iteration with loss inside `[lower, upper]`.
    Bracketed(usize),
    /// The loss fell below `lower` without entering the interval; the last
    /// iteration recorded before that crossing.
    BeforeCrossing(usize),
    NeverBracketed,
}

impl StopRecommendation {
    pub fn iteration(self) -> Option<usize> {
        match self {
            StopRecommendation::Bracketed(i) | StopRecommendation::BeforeCrossing(i) => Some(i),
            StopRecommendation::NeverBracketed => None,
        }
    }

    pub fn overfit_warning(self) -> bool {
        matches!(self, StopRecommendation::BeforeCrossing(_))
    }
}

/// Stop when the in-sample loss (a cost) first lies between the lower and
/// upper ADRL bounds.
pub fn stop_iteration(trace: &[(usize, f64)], lower: f64, upper: f64) -> StopRecommendation {
    let mut prev = None;
    for &(it, loss) in trace {
        if (lower..=upper).contains(&loss) {
            return StopRecommendation::Bracketed(it);
        }
        if loss < lower {
            return prev.map_or(StopRecommendation::NeverBracketed, StopRecommendation::BeforeCrossing);
        }
        prev = Some(it);
    }
    StopRecommendation::NeverBracketed
}

/// [`stop_iteration`] with the bounds of a minimisation report.
pub fn derm_stopping_rule(trace: &[(usize, f64)], report: &BoundReport) -> StopRecommendation {
    let (lower, upper) = match report.sense {
        Sense::Minimize => (report.dual.mean, report.primal.mean),
        Sense::Maximize => (report.primal.mean, report.dual.mean),
    };
    stop_iteration(trace, lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::TradeExecModel;

    #[test]
    fn stopping_rule_examples() {
        let trace = [(1, 110.0), (2, 104.0), (3, 99.0)];
        assert_eq!(stop_iteration(&trace, 100.0, 105.0), StopRecommendation::Bracketed(2));
        assert_eq!(stop_iteration(&[(1, 120.0), (2, 110.0)], 100.0, 105.0), StopRecommendation::NeverBracketed);
        let jump = stop_iteration(&[(10, 110.0), (20, 107.0), (30, 95.0), (40, 102.0)], 100.0, 105.0);
        assert_eq!(jump, StopRecommendation::BeforeCrossing(20));
        assert!(jump.overfit_warning());
        assert_eq!(stop_iteration(&[(0, 90.0)], 100.0, 105.0).iteration(), None);
    }

    fn small_problem() -> TradeExecution {
        TradeExecution::new(TradeExecModel::pinned_default(2, 1, 3, true, 0).unwrap()).unwrap()
    }

    #[test]
    fn initial_policy_is_uniform() {
        let p = small_problem();
        let pol = DermPolicy::initialized(&p, 8, 1, Activation::Softplus, 1);
        let s0 = p.initial_state();
        let a = pol.act(0, &s0).unwrap();
        for (ai, ri) in a.iter().zip(&p.model().target) {
            assert!((ai - ri / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_iterations_returns_initial_loss() {
        let p = small_problem();
        let ds = sample_noise_dataset(&p, 8, 8, 3).unwrap();
        let cfg = DermConfig { width: 8, depth: 1, iterations: 0, eval_paths: 0, ..DermConfig::default() };
        let run = derm_train(&p, &ds, &cfg).unwrap();
        let init = DermPolicy::initialized(&p, 8, 1, cfg.activation, cfg.seed);
        assert_eq!(run.policy, init);
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].train_loss, evaluate_policy(&p, &init, &ds).unwrap().mean);
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        let p = small_problem();
        let ds = sample_noise_dataset(&p, 3, 3, 4).unwrap();
        let mut pol = DermPolicy::initialized(&p, 5, 1, Activation::Softplus, 2);
        // move off the zero output layer so every parameter matters
        let mut rng = stream(9, Purpose::Init, 0, 0);
        for block in &mut pol.params {
            for v in block.iter_mut() {
                *v += 0.3 * crate::rng::standard_normal(&mut rng);
            }
        }
        let (_, grad) = pol.loss_and_grad(&p, &ds);
        let h = 1e-5;
        for t in 0..pol.params.len() {
            for j in (0..pol.params[t].len()).step_by(3) {
                let mut up = pol.clone();
                up.params[t][j] += h;
                let mut dn = pol.clone();
                dn.params[t][j] -= h;
                let fd = (up.loss(&p, &ds) - dn.loss(&p, &ds)) / (2.0 * h);
                assert!((fd - grad[t][j]).abs() <= 1e-5 * (1.0 + fd.abs()), "t {t} j {j}: {fd} vs {}", grad[t][j]);
            }
        }
    }

    #[test]
    fn small_steps_do_not_increase_loss() {
        let model = TradeExecModel::single_asset(0.1, 10.0, 50.0, 4).unwrap();
        let p = TradeExecution::new(model).unwrap();
        let ds = sample_noise_dataset(&p, 16, 16, 5).unwrap();
        let cfg = DermConfig {
            width: 4,
            depth: 0,
            iterations: 40,
            learning_rate: 1e-4,
            optimizer: DermOptimizer::Sgd,
            eval_paths: 0,
            ..DermConfig::default()
        };
        let run = derm_train(&p, &ds, &cfg).unwrap();
        for w in run.records.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-12, "{:?}", w);
        }
        assert!(run.records.last().unwrap().train_loss < run.records[0].train_loss);
    }

    #[test]
    fn overfit_flag_fires_on_crossing() {
        let p = small_problem();
        let ds = sample_noise_dataset(&p, 4, 4, 6).unwrap();
        let base = DermConfig { width: 8, depth: 1, iterations: 5, eval_paths: 0, ..DermConfig::default() };
        let init_loss = derm_train(&p, &ds, &DermConfig { iterations: 0, ..base }).unwrap().records[0].train_loss;
        let above = derm_train(&p, &ds, &DermConfig { dual_bound: Some(init_loss - 1e6), ..base }).unwrap();
        assert_eq!(above.overfit_at, None);
        let below = derm_train(&p, &ds, &DermConfig { dual_bound: Some(init_loss + 1.0), ..base }).unwrap();
        assert_eq!(below.overfit_at, Some(0));
        assert!(below.trace_csv().starts_with("iteration,train_loss"));
    }
}
