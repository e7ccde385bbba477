use std::fmt::Write as _;
use std::time::Instant;

use super::estimators::{
    rademacher_direction, rm_gradient_from, solve_batch, spsa_gradient, SpsaSchedule,
};
use crate::bounds::{bound_report, BoundConfig, BoundReport};
use crate::control::{enumerate_noise_dataset, sample_paths, ControlProblem, NoiseDataset};
use crate::duality::{Expectation, NetworkValue, PenaltyContext, SolverConfig};
use crate::error::{AdrlError, Result};
use crate::neural::{AdamState, GeneratingFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Envelope-theorem (Robbins-Monro) gradient with Adam updates.
    Rm,
    /// Simultaneous perturbation with the decaying gain schedule.
    Spsa,
}

impl Estimator {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rm" => Ok(Estimator::Rm),
            "spsa" => Ok(Estimator::Spsa),
            other => Err(AdrlError::config(format!("unknown estimator `{other}` (expected rm or spsa)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Rm => "rm",
            Estimator::Spsa => "spsa",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Paths per epoch; a multiple of the batch size.
    pub epoch_paths: usize,
    /// Reuse the first epoch's paths for every epoch instead of drawing
    /// fresh ones.
    pub freeze_dataset: bool,
    /// Train on the full enumerated noise tree (finite noise only).
    pub enumerate: bool,
    pub estimator: Estimator,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub spsa_c0: f64,
    pub seed: u64,
    /// Expectation inside the penalty. Monte Carlo draws are regenerated
    /// every iteration unless `freeze_inner` is set.
    pub inner: Expectation,
    pub freeze_inner: bool,
    pub solver: SolverConfig,
    /// Warm-start inner solves from the previous maximiser of the same path
    /// (only meaningful when paths repeat).
    pub warm_start: bool,
    /// Periodic evaluation cadence in iterations; 0 evaluates only at the
    /// start and end (if `eval` is set).
    pub eval_every: usize,
    pub eval: Option<BoundConfig>,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            batch_size: 8,
            epoch_paths: 256,
            freeze_dataset: false,
            enumerate: false,
            estimator: Estimator::Rm,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            spsa_c0: 1e-2,
            seed: 0,
            inner: Expectation::MonteCarlo { samples: 32, seed: 11, round: 0 },
            freeze_inner: false,
            solver: SolverConfig::default(),
            warm_start: true,
            eval_every: 500,
            eval: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || (!self.enumerate && self.epoch_paths % self.batch_size != 0) {
            return Err(AdrlError::config("epoch_paths must be a positive multiple of batch_size"));
        }
        if !(self.learning_rate > 0.0) || !(self.spsa_c0 > 0.0) {
            return Err(AdrlError::config("learning_rate and spsa_c0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return Err(AdrlError::config("Adam parameters out of range"));
        }
        Ok(())
    }
}

/// One iteration (or the pre-training evaluation at iteration 0).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Batch dual objective in the native sense (NaN when not computed).
    pub batch_objective: f64,
    pub grad_norm: f64,
    pub excluded: usize,
    pub aborted: bool,
    /// Hash of the parameters the record was computed from.
    pub checkpoint: String,
    pub wall_seconds: f64,
    pub eval: Option<BoundReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

fn cell(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:?}");
    }
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str =
        "iter,batch_obj,grad_norm,dual_mean,dual_se,primal_mean,primal_se,gap,excluded,aborted,checkpoint";

    /// Trace as CSV; evaluation columns are empty on non-evaluation rows.
    /// Wall-clock times are left out so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},", r.iteration);
            cell(&mut out, r.batch_objective);
            out.push(',');
            cell(&mut out, r.grad_norm);
            out.push(',');
            match &r.eval {
                Some(e) => {
                    for v in [e.dual.mean, e.dual.stderr, e.primal.mean, e.primal.stderr, e.gap] {
                        cell(&mut out, v);
                        out.push(',');
                    }
                }
                None => out.push_str(",,,,,"),
            }
            let _ = writeln!(out, "{},{},{}", r.excluded, r.aborted, r.checkpoint);
        }
        out
    }

    /// `iteration,wall_seconds` rows.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("iter,wall_seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:.3}", r.iteration, r.wall_seconds);
        }
        out
    }

    pub fn evaluations(&self) -> impl Iterator<Item = (usize, &BoundReport)> {
        self.records.iter().filter_map(|r| r.eval.as_ref().map(|e| (r.iteration, e)))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub gen: GeneratingFunction,
    pub trace: TrainTrace,
    /// Reason training stopped early, if it did.
    pub halted: Option<String>,
}

/// Consecutive aborted iterations after which training halts.
pub const MAX_CONSECUTIVE_ABORTS: usize = 3;

/// [`train_adrl_with`] without checkpoint callbacks.
pub fn train_adrl<P: ControlProblem + ?Sized>(
    problem: &P,
    cfg: &TrainConfig,
    init: GeneratingFunction,
) -> Result<TrainOutcome> {
    train_adrl_with(problem, cfg, init, |_| Ok(()))
}

fn evaluate<P: ControlProblem + ?Sized>(problem: &P, gen: &GeneratingFunction, eval: &BoundConfig) -> Result<BoundReport> {
    let value = NetworkValue::new(problem, gen);
    bound_report(problem, &value, eval, Some(gen.hash()))
}

/// Alternates the Action Stage (inner solves per path) and the Adversarial
/// Stage (gradient step on the generating function) for `cfg.iterations`
/// minibatches. `on_checkpoint` sees the parameters every
/// `checkpoint_every` iterations and at the end.
pub fn train_adrl_with<P, F>(
    problem: &P,
    cfg: &TrainConfig,
    init: GeneratingFunction,
    mut on_checkpoint: F,
) -> Result<TrainOutcome>
where
    P: ControlProblem + ?Sized,
    F: FnMut(&GeneratingFunction) -> Result<()>,
{
    cfg.validate()?;
    let dims = problem.dims();
    if init.horizon() != dims.horizon || init.features().state_dim() != dims.state {
        return Err(AdrlError::config("generating function does not match the problem"));
    }
    let started = Instant::now();
    let mut gen = init;
    let mut trace = TrainTrace::default();
    if let Some(eval) = &cfg.eval {
        trace.records.push(TrainRecord {
            iteration: gen.iteration as usize,
            batch_objective: f64::NAN,
            grad_norm: f64::NAN,
            excluded: 0,
            aborted: false,
            checkpoint: gen.hash(),
            wall_seconds: started.elapsed().as_secs_f64(),
            eval: Some(evaluate(problem, &gen, eval)?),
        });
    }

    let fixed = if cfg.enumerate { Some(enumerate_noise_dataset(problem)?) } else { None };
    let batch_size = fixed.as_ref().map_or(cfg.batch_size, NoiseDataset::len);
    let epoch_paths = fixed.as_ref().map_or(cfg.epoch_paths, NoiseDataset::len);
    let batches_per_epoch = epoch_paths / batch_size;
    let mut epoch_data: Option<(usize, NoiseDataset)> = None;
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; epoch_paths];
    let mask: Vec<bool> =
        (0..=gen.horizon()).flat_map(|t| std::iter::repeat_n(gen.is_trainable(t), gen.block(t).len())).collect();
    let mut adam = AdamState::new(gen.param_count());
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.eps_adam;
    let schedule = SpsaSchedule::for_run(cfg.learning_rate, cfg.spsa_c0, cfg.iterations);
    let sign = problem.sense().sign();
    let reuse_paths = cfg.enumerate || cfg.freeze_dataset;
    let mut aborts = 0;
    let mut halted = None;

    for b in 1..=cfg.iterations {
        let epoch = (b - 1) / batches_per_epoch;
        let data_epoch = if reuse_paths { 0 } else { epoch };
        if epoch_data.as_ref().is_none_or(|(e, _)| *e != data_epoch) {
            let ds = match &fixed {
                Some(ds) => ds.clone(),
                None => sample_paths(
                    problem.noise(),
                    dims.horizon,
                    epoch_paths,
                    batch_size,
                    cfg.seed,
                    (data_epoch * epoch_paths) as u64,
                )?,
            };
            epoch_data = Some((data_epoch, ds));
        }
        let dataset = &epoch_data.as_ref().expect("dataset loaded").1;
        let indices: Vec<usize> = dataset.batch((b - 1) % batches_per_epoch).collect();
        let inner = match cfg.inner {
            Expectation::MonteCarlo { samples, seed, .. } if !cfg.freeze_inner => {
                Expectation::MonteCarlo { samples, seed, round: b as u64 }
            }
            other => other,
        };
        let solver = SolverConfig { round: b as u64, ..cfg.solver };
        let warm_batch: Option<Vec<Option<Vec<f64>>>> =
            (cfg.warm_start && reuse_paths).then(|| indices.iter().map(|&i| warm[i].clone()).collect());
        let checkpoint = gen.hash();

        let step: Result<(f64, Vec<f64>, usize, Vec<crate::duality::DualSolveResult>)> = (|| match cfg.estimator {
            Estimator::Rm => {
                let value = NetworkValue::new(problem, &gen);
                let ctx = PenaltyContext::new(problem, &value, inner)?;
                let results = solve_batch(&ctx, problem, dataset, &indices, warm_batch.as_deref(), &solver)?;
                let est = rm_gradient_from(&ctx, problem, &gen, dataset, &indices, &results)?;
                Ok((est.objective, est.grad, est.excluded, results))
            }
            Estimator::Spsa => {
                let delta = rademacher_direction(&gen, cfg.seed, b as u64);
                let est = spsa_gradient(
                    problem,
                    &gen,
                    inner,
                    dataset,
                    &indices,
                    &delta,
                    schedule.perturbation(b),
                    warm_batch.as_deref(),
                    &solver,
                )?;
                Ok((0.5 * (est.plus + est.minus), est.grad, est.excluded, est.results))
            }
        })();

        let mut record = TrainRecord {
            iteration: b,
            batch_objective: f64::NAN,
            grad_norm: f64::NAN,
            excluded: 0,
            aborted: false,
            checkpoint,
            wall_seconds: 0.0,
            eval: None,
        };
        match step {
            Ok((objective, grad, excluded, results)) => {
                let update = match cfg.estimator {
                    Estimator::Rm => {
                        let mut params = gen.params().to_vec();
                        adam.update(&mut params, &grad, cfg.learning_rate, Some(&mask)).map(|_| params)
                    }
                    Estimator::Spsa => {
                        if grad.iter().all(|g| g.is_finite()) {
                            let gamma = schedule.step(b);
                            Ok(gen.params().iter().zip(&grad).map(|(p, g)| p - gamma * g).collect())
                        } else {
                            Err(AdrlError::numerical("non-finite SPSA gradient"))
                        }
                    }
                };
                match update.and_then(|params| gen.set_params(&params)) {
                    Ok(()) => {
                        aborts = 0;
                        gen.iteration += 1;
                        record.batch_objective = sign * objective;
                        record.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                        record.excluded = excluded;
                        if warm_batch.is_some() {
                            for (&i, r) in indices.iter().zip(results) {
                                warm[i] = Some(r.actions);
                            }
                        }
                    }
                    Err(e) => {
                        aborts += 1;
                        record.aborted = true;
                        log_abort(b, &e);
                    }
                }
            }
            Err(e @ AdrlError::Numerical(_)) => {
                aborts += 1;
                record.aborted = true;
                log_abort(b, &e);
            }
            Err(e) => return Err(e),
        }

        let last = b == cfg.iterations || aborts >= MAX_CONSECUTIVE_ABORTS;
        if let Some(eval) = &cfg.eval {
            if last || (cfg.eval_every > 0 && b % cfg.eval_every == 0) {
                record.eval = Some(evaluate(problem, &gen, eval)?);
            }
        }
        if cfg.checkpoint_every > 0 && b % cfg.checkpoint_every == 0 && !last {
            on_checkpoint(&gen)?;
        }
        record.wall_seconds = started.elapsed().as_secs_f64();
        trace.records.push(record);
        if aborts >= MAX_CONSECUTIVE_ABORTS {
            halted = Some(format!("{MAX_CONSECUTIVE_ABORTS} consecutive aborted iterations ending at {b}"));
            break;
        }
    }
    on_checkpoint(&gen)?;
    Ok(TrainOutcome { gen, trace, halted })
}

fn log_abort(b: usize, e: &AdrlError) {
    log::warn!("iteration {b} aborted: {e}");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_toy_t1, TradeExecModel, TradeExecution};
    use crate::neural::{Activation, Architecture, FeatureMap};

    fn toy_gen() -> GeneratingFunction {
        let arch = Architecture::new(1, 0, 0, 1, Activation::Softplus);
        GeneratingFunction::zeros(1, FeatureMap::Identity { dim: 1 }, arch, false).unwrap()
    }

    fn toy_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            enumerate: true,
            learning_rate: 0.1,
            inner: Expectation::Exact,
            eval_every: 1,
            eval: Some(BoundConfig {
                enumerate: true,
                inner: Expectation::Exact,
                greedy: Expectation::Exact,
                ..BoundConfig::default()
            }),
            ..TrainConfig::default()
        }
    }

    fn duals(trace: &TrainTrace) -> Vec<f64> {
        trace.evaluations().map(|(_, e)| e.dual.mean).collect()
    }

    #[test]
    fn toy_dual_decreases_under_rm_adam() {
        let p = make_toy_t1();
        let out = train_adrl(&p, &toy_config(8), toy_gen()).unwrap();
        let d = duals(&out.trace);
        assert_eq!(d.len(), 9);
        assert!((d[0] - 0.5).abs() < 1e-12);
        for w in d.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{d:?}");
        }
        // Adam with a constant gradient takes steps of exactly the learning rate
        assert!((out.gen.block(1)[0] - 0.8).abs() < 1e-6);
        assert!((d[8] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn toy_dual_approaches_zero() {
        let p = make_toy_t1();
        let out = train_adrl(&p, &toy_config(30), toy_gen()).unwrap();
        let best = duals(&out.trace).into_iter().fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "{best}");
    }

    #[test]
    fn zero_iterations_keep_the_initial_checkpoint() {
        let p = make_toy_t1();
        let mut init = toy_gen();
        init.block_mut(1)[0] = 0.25;
        let out = train_adrl(&p, &TrainConfig { eval: None, ..toy_config(0) }, init.clone()).unwrap();
        assert_eq!(out.gen, init);
        assert!(out.trace.records.is_empty());
    }

    #[test]
    fn execution_runs_are_deterministic() {
        let model = TradeExecModel::pinned_default(2, 1, 3, true, 0).unwrap();
        let features = FeatureMap::for_exec(&model);
        let p = TradeExecution::new(model).unwrap();
        let init = GeneratingFunction::initialized(3, features, 6, 1, Activation::Softplus, true, 4).unwrap();
        let cfg = TrainConfig {
            iterations: 6,
            batch_size: 4,
            epoch_paths: 8,
            learning_rate: 1e-2,
            inner: Expectation::MonteCarlo { samples: 8, seed: 2, round: 0 },
            eval_every: 3,
            eval: Some(BoundConfig {
                dual_paths: 16,
                primal_paths: 0,
                inner: Expectation::MonteCarlo { samples: 8, seed: 3, round: 0 },
                ..BoundConfig::default()
            }),
            ..TrainConfig::default()
        };
        let a = train_adrl(&p, &cfg, init.clone()).unwrap();
        let b = train_adrl(&p, &cfg, init.clone()).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(a.gen.hash(), b.gen.hash());
        assert_ne!(a.gen.hash(), init.hash());
        assert!(a.halted.is_none());
        assert_eq!(a.trace.records.len(), 7);
        assert!(a.trace.records[1..].iter().all(|r| r.batch_objective.is_finite()));

        let spsa = TrainConfig { estimator: Estimator::Spsa, ..cfg };
        let s1 = train_adrl(&p, &spsa, init.clone()).unwrap();
        let s2 = train_adrl(&p, &spsa, init).unwrap();
        assert_eq!(s1.trace.to_csv(), s2.trace.to_csv());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epoch_paths: 10, batch_size: 4, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(Estimator::parse("SPSA").unwrap(), Estimator::Spsa);
        assert!(Estimator::parse("sgd").is_err());
    }
}
