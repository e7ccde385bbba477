use super::penalty::PenaltyContext;
use crate::control::{ControlProblem, NoiseDataset, NoisePath};
use crate::error::{AdrlError, Result};
use crate::parallel::map_indexed;
use crate::rng::{stream, Purpose};
use crate::stats::Estimate;

/// Settings for projected-gradient ascent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `‖P(x + ∇F) - x‖ ≤ tol`.
    pub tol: f64,
    /// Residual above which a start counts as not converged.
    pub warn_tol: f64,
    /// Number of random feasible restarts besides the warm and uniform starts.
    pub random_starts: usize,
    pub seed: u64,
    pub round: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iters: 500, tol: 1e-6, warn_tol: 1e-3, random_starts: 1, seed: 0, round: 0 }
    }
}

const ARMIJO: f64 = 1e-4;
const CONTRACTION: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e12;

/// Outcome of one projected ascent run.
#[derive(Clone, Debug, PartialEq)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximise `F` over a convex set by projected gradient ascent.
///
/// The first trial step is 1; later iterations start from the
/// Barzilai-Borwein step. Each trial is backtracked by halving until the
/// Armijo condition holds, so the objective never decreases.
pub fn projected_ascent<F, G, Pr>(x0: &[f64], value: F, value_grad: G, project: Pr, cfg: &SolverConfig) -> AscentResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]) -> f64,
    Pr: Fn(&mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = value_grad(&x, &mut g);
    let mut step = 1.0;
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let residual_at = |x: &[f64], g: &[f64], buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend(x.iter().zip(g).map(|(a, b)| a + b));
        project(buf);
        norm(buf.iter().zip(x).map(|(p, a)| p - a))
    };
    let mut residual = residual_at(&x, &g, &mut trial);
    let mut iterations = 0;
    while iterations < cfg.max_iters && residual > cfg.tol {
        iterations += 1;
        let mut alpha = step;
        let accepted = loop {
            trial.clear();
            trial.extend(x.iter().zip(&g).map(|(a, b)| a + alpha * b));
            project(&mut trial);
            let ascent: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (t, a))| gi * (t - a)).sum();
            let f_trial = value(&trial);
            if f_trial.is_finite() && f_trial >= fx + ARMIJO * ascent && f_trial >= fx {
                break Some(f_trial);
            }
            alpha *= CONTRACTION;
            if alpha < MIN_STEP {
                break None;
            }
        };
        let Some(_) = accepted else { break };
        let f_new = value_grad(&trial, &mut g_new);
        // Barzilai-Borwein for the minimisation of -F
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let s = trial[i] - x[i];
            ss += s * s;
            sy -= s * (g_new[i] - g[i]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(MIN_STEP, MAX_STEP) } else { (alpha * 2.0).min(MAX_STEP) };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        residual = residual_at(&x, &g, &mut trial);
    }
    AscentResult { x, value: fx, iterations, residual }
}

/// Which start produced the reported maximiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartKind {
    Warm,
    Uniform,
    Random(usize),
}

/// Inner maximiser for one noise path.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolveResult {
    pub path_id: u64,
    /// `T × n` schedule, row-major.
    pub actions: Vec<f64>,
    /// Pathwise objective at `actions`, internal (maximisation) sense.
    pub objective: f64,
    pub penalties: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub starts: usize,
    pub winner: StartKind,
    pub converged: bool,
}

fn feasible_start<P: ControlProblem + ?Sized>(problem: &P, mut x: Vec<f64>) -> Vec<f64> {
    if problem.schedule_violation(&x) > 1e-9 {
        problem.project_schedule(&mut x);
    }
    x
}

/// Maximise the pathwise objective over feasible schedules from the warm
/// start (if any), the uniform schedule and random feasible schedules.
/// Ties keep the earliest start.
pub fn inner_solve<P: ControlProblem + ?Sized>(
    ctx: &PenaltyContext<'_>,
    problem: &P,
    path: &NoisePath,
    warm_start: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<DualSolveResult> {
    let local = ctx.for_path(problem, path.path_id)?;
    let ctx = local.as_ref().unwrap_or(ctx);
    let dims = problem.dims();
    let len = dims.horizon * dims.action;
    let mut starts: Vec<(StartKind, Vec<f64>)> = Vec::with_capacity(2 + cfg.random_starts);
    if let Some(w) = warm_start {
        if w.len() != len {
            return Err(AdrlError::config("warm start has the wrong shape"));
        }
        starts.push((StartKind::Warm, feasible_start(problem, w.to_vec())));
    }
    starts.push((StartKind::Uniform, feasible_start(problem, problem.nominal_schedule())));
    for k in 0..cfg.random_starts {
        let mut rng = stream(cfg.seed, Purpose::RandomStart, path.path_id, cfg.round.wrapping_mul(64) + k as u64);
        starts.push((StartKind::Random(k), feasible_start(problem, problem.random_schedule(&mut rng))));
    }

    let mut best: Option<(StartKind, AscentResult)> = None;
    let mut converged = false;
    let mut total_iters = 0;
    for (kind, x0) in &starts {
        let run = projected_ascent(
            x0,
            |x| ctx.objective(problem, x, path),
            |x, g| ctx.objective_grad(problem, x, path, g),
            |x| problem.project_schedule(x),
            cfg,
        );
        total_iters += run.iterations;
        converged |= run.residual <= cfg.warn_tol;
        if best.as_ref().is_none_or(|(_, b)| run.value > b.value) {
            best = Some((*kind, run));
        }
    }
    let (winner, run) = best.expect("at least one start");
    let eval = ctx.pathwise_objective(problem, &run.x, path)?;
    Ok(DualSolveResult {
        path_id: path.path_id,
        actions: run.x,
        objective: eval.objective,
        penalties: eval.penalties,
        states: eval.states,
        iterations: total_iters,
        kkt_residual: run.residual,
        starts: starts.len(),
        winner,
        converged,
    })
}

/// Monte Carlo (or exact, on enumerated datasets) dual value.
#[derive(Clone, Debug)]
pub struct DualEstimate {
    /// In the problem's native sense: an upper bound when maximising, a
    /// lower bound when minimising.
    pub native: Estimate,
    /// Per-path inner maxima, native sense, in dataset order.
    pub per_path: Vec<f64>,
    pub results: Vec<DualSolveResult>,
    pub nonconverged: usize,
}

impl DualEstimate {
    pub fn variance(&self) -> f64 {
        crate::stats::sample_variance(&self.per_path)
    }
}

pub fn dual_value<P: ControlProblem + ?Sized>(
    ctx: &PenaltyContext<'_>,
    problem: &P,
    dataset: &NoiseDataset,
    cfg: &SolverConfig,
) -> Result<DualEstimate> {
    dual_value_warm(ctx, problem, dataset, None, cfg)
}

/// [`dual_value`] with optional per-path warm starts (dataset order).
pub fn dual_value_warm<P: ControlProblem + ?Sized>(
    ctx: &PenaltyContext<'_>,
    problem: &P,
    dataset: &NoiseDataset,
    warm: Option<&[Vec<f64>]>,
    cfg: &SolverConfig,
) -> Result<DualEstimate> {
    if dataset.is_empty() {
        return Err(AdrlError::config("cannot estimate a dual value on an empty dataset"));
    }
    let results = map_indexed(dataset.len(), |i| {
        inner_solve(ctx, problem, &dataset.paths()[i], warm.map(|w| w[i].as_slice()), cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let sign = problem.sense().sign();
    let per_path: Vec<f64> = results.iter().map(|r| sign * r.objective).collect();
    let native = match dataset.weights() {
        Some(w) => Estimate::from_weighted(&per_path, w),
        None => Estimate::from_samples(&per_path),
    };
    let nonconverged = results.iter().filter(|r| !r.converged).count();
    Ok(DualEstimate { native, per_path, results, nonconverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::enumerate_noise_dataset;
    use crate::duality::{Expectation, FnValue, ZeroValue};
    use crate::envs::make_toy_t1;

    #[test]
    fn quadratic_ascent_on_box() {
        // max -(x - 2)^2 over [0, 1]
        let cfg = SolverConfig::default();
        let r = projected_ascent(
            &[0.5],
            |x| -(x[0] - 2.0).powi(2),
            |x, g| {
                g[0] = -2.0 * (x[0] - 2.0);
                -(x[0] - 2.0).powi(2)
            },
            |x| x[0] = x[0].clamp(0.0, 1.0),
            &cfg,
        );
        assert_eq!(r.x, vec![1.0]);
        assert!(r.residual <= 1e-6);
    }

    #[test]
    fn toy_inner_solutions_without_penalty() {
        let p = make_toy_t1();
        let ctx = PenaltyContext::new(&p, &ZeroValue, Expectation::Exact).unwrap();
        let cfg = SolverConfig::default();
        let plus = NoisePath::from_steps(0, &[vec![1.0]]).unwrap();
        let minus = NoisePath::from_steps(1, &[vec![-1.0]]).unwrap();
        let r = inner_solve(&ctx, &p, &plus, None, &cfg).unwrap();
        assert_eq!((r.actions.clone(), r.objective), (vec![1.0], 1.0));
        let r = inner_solve(&ctx, &p, &minus, None, &cfg).unwrap();
        assert_eq!((r.actions.clone(), r.objective), (vec![0.0], 0.0));
        assert!(r.converged);
    }

    #[test]
    fn toy_dual_values() {
        let p = make_toy_t1();
        let ds = enumerate_noise_dataset(&p).unwrap();
        let cfg = SolverConfig::default();
        let d0 = dual_value(&PenaltyContext::new(&p, &ZeroValue, Expectation::Exact).unwrap(), &p, &ds, &cfg).unwrap();
        assert_eq!((d0.native.mean, d0.native.stderr), (0.5, 0.0));
        let ident = FnValue { value: |_: usize, s: &[f64]| s[0], grad: |_: usize, _: &[f64]| vec![1.0] };
        let ctx = PenaltyContext::new(&p, &ident, Expectation::Exact).unwrap();
        let d1 = dual_value(&ctx, &p, &ds, &cfg).unwrap();
        assert_eq!((d1.native.mean, d1.native.stderr), (0.0, 0.0));
        assert!(d1.per_path.iter().all(|y| *y == 0.0));
        assert!(d1.results.iter().all(|r| r.winner == StartKind::Uniform));
        let half = FnValue { value: |_: usize, s: &[f64]| 0.5 * s[0], grad: |_: usize, _: &[f64]| vec![0.5] };
        let ctx = PenaltyContext::new(&p, &half, Expectation::Exact).unwrap();
        assert!((dual_value(&ctx, &p, &ds, &cfg).unwrap().native.mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_rejected() {
        let p = make_toy_t1();
        let ctx = PenaltyContext::new(&p, &ZeroValue, Expectation::Exact).unwrap();
        let ds = NoiseDataset::new(0, 1, 1, 1, vec![], None).unwrap();
        assert!(dual_value(&ctx, &p, &ds, &SolverConfig::default()).is_err());
    }
}
