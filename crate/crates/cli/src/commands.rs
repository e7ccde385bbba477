use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use adrl_core::bounds::{
    bound_report, derm_stopping_rule, derm_train, dp_oracle_discrete, exec_closed_form, BoundConfig, BoundReport,
    DermConfig, DermOptimizer, GreedyPolicy, StopRecommendation,
};
use adrl_core::control::{
    enumerate_noise_dataset, policy_totals, sample_noise_dataset, ControlProblem, NoiseDataset, Policy, Sense,
};
use adrl_core::duality::{dual_value, Expectation, NetworkValue, PenaltyContext, SolverConfig, ValueFunction};
use adrl_core::envs::{make_toy_chain_with, ExecModelConfig, ToyChain, ToyTerminal, TradeExecution};
use adrl_core::neural::{Activation, FeatureMap, GeneratingFunction};
use adrl_core::stats::Estimate;
use adrl_core::training::{train_adrl_with, Estimator, TrainConfig};
use adrl_core::AdrlError;
use sha2::{Digest, Sha256};

use crate::config::{self, Manifest, RunConfig};
use crate::curve::emit_learning_curve;
use crate::{selftest, Cli, CliError, Command};

pub const OUT_DIR_ENV: &str = "ADRL_OUT_DIR";

pub enum Problem {
    Exec(TradeExecution),
    Toy(ToyChain),
}

impl Problem {
    pub fn as_dyn(&self) -> &dyn ControlProblem {
        match self {
            Problem::Exec(p) => p,
            Problem::Toy(p) => p,
        }
    }

    pub fn features(&self) -> FeatureMap {
        match self {
            Problem::Exec(p) => FeatureMap::for_exec(p.model()),
            Problem::Toy(_) => FeatureMap::Identity { dim: 1 },
        }
    }

    fn exec(&self) -> Result<&TradeExecution, CliError> {
        match self {
            Problem::Exec(p) => Ok(p),
            Problem::Toy(_) => Err(AdrlError::Unsupported("this subcommand needs the execution problem".into()).into()),
        }
    }

    fn model_table(&self) -> Option<toml::Table> {
        match self {
            Problem::Exec(p) => p.model().to_config().to_toml().parse().ok(),
            Problem::Toy(_) => None,
        }
    }

    /// Exact reference value when one is cheap: the oracle on toy chains,
    /// the closed form on the unconstrained execution problem.
    pub fn reference_value(&self, cfg: &RunConfig) -> Result<Option<f64>, CliError> {
        if cfg.oracle_value.is_some() {
            return Ok(cfg.oracle_value);
        }
        Ok(match self {
            Problem::Toy(p) => Some(dp_oracle_discrete(p, cfg.grid_points)?.initial_value()),
            Problem::Exec(p) if !p.model().no_shorting => Some(exec_closed_form(p.model())?.cost),
            Problem::Exec(_) => None,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// The problem described by `cfg`, and the hash of its model file if any.
pub fn build_problem(cfg: &RunConfig) -> Result<(Problem, Option<String>), CliError> {
    match cfg.problem.as_str() {
        "toy" => {
            let terminal = match cfg.toy_terminal.as_str() {
                "identity" => ToyTerminal::Identity,
                "abs" => ToyTerminal::Abs,
                other => return Err(CliError::Usage(format!("toy_terminal: unknown terminal `{other}`"))),
            };
            Ok((Problem::Toy(make_toy_chain_with(cfg.toy_horizon, terminal)?), None))
        }
        "exec" => {
            let (mut model_cfg, hash) = if cfg.model_file.is_empty() {
                (ExecModelConfig::default(), None)
            } else {
                let bytes = read_bytes(Path::new(&cfg.model_file))?;
                let text = String::from_utf8(bytes.clone())
                    .map_err(|_| CliError::Usage(format!("{} is not text", cfg.model_file)))?;
                (ExecModelConfig::from_toml(&text)?, Some(sha256_hex(&bytes)))
            };
            model_cfg.n_assets.get_or_insert(cfg.n_assets);
            model_cfg.signal_dim.get_or_insert(cfg.signal_dim);
            model_cfg.horizon.get_or_insert(cfg.horizon);
            model_cfg.no_shorting.get_or_insert(cfg.no_shorting);
            model_cfg.model_seed.get_or_insert(cfg.model_seed);
            Ok((Problem::Exec(TradeExecution::new(model_cfg.resolve()?)?), hash))
        }
        other => Err(CliError::Usage(format!("problem: unknown problem `{other}` (expected exec or toy)"))),
    }
}

pub fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        max_iters: cfg.solver_max_iters,
        tol: cfg.solver_tol,
        random_starts: cfg.random_starts,
        seed: cfg.solver_seed,
        ..SolverConfig::default()
    }
}

pub fn bound_config(cfg: &RunConfig, problem: &Problem) -> BoundConfig {
    let solver = solver_config(cfg);
    match problem {
        Problem::Toy(_) => BoundConfig {
            enumerate: true,
            inner: Expectation::Exact,
            greedy: Expectation::Exact,
            dual_seed: cfg.dual_seed,
            primal_seed: cfg.primal_seed,
            solver,
            ..BoundConfig::default()
        },
        Problem::Exec(_) => BoundConfig {
            enumerate: false,
            dual_paths: cfg.dual_paths,
            dual_seed: cfg.dual_seed,
            primal_paths: cfg.primal_paths,
            primal_seed: cfg.primal_seed,
            inner: if cfg.eval_inner_per_path {
                Expectation::PerPath { samples: cfg.eval_inner_samples, seed: cfg.eval_inner_seed }
            } else {
                Expectation::MonteCarlo { samples: cfg.eval_inner_samples, seed: cfg.eval_inner_seed, round: 0 }
            },
            greedy: Expectation::MonteCarlo { samples: cfg.greedy_samples, seed: cfg.greedy_seed, round: 0 },
            solver,
        },
    }
}

pub fn train_config(cfg: &RunConfig, problem: &Problem) -> Result<TrainConfig, CliError> {
    let toy = matches!(problem, Problem::Toy(_));
    let tc = TrainConfig {
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        epoch_paths: cfg.epoch_paths,
        freeze_dataset: cfg.freeze_dataset,
        enumerate: toy,
        estimator: Estimator::parse(&cfg.estimator)?,
        learning_rate: cfg.learning_rate,
        spsa_c0: cfg.spsa_c0,
        seed: cfg.train_seed,
        inner: if toy {
            Expectation::Exact
        } else {
            Expectation::MonteCarlo { samples: cfg.inner_samples, seed: cfg.inner_seed, round: 0 }
        },
        freeze_inner: cfg.freeze_inner,
        solver: solver_config(cfg),
        eval_every: cfg.eval_every,
        eval: (toy || cfg.dual_paths > 0).then(|| bound_config(cfg, problem)),
        checkpoint_every: cfg.checkpoint_every,
        ..TrainConfig::default()
    };
    tc.validate()?;
    Ok(tc)
}

pub fn initial_generating_function(cfg: &RunConfig, problem: &Problem) -> Result<GeneratingFunction, CliError> {
    Ok(GeneratingFunction::initialized(
        problem.as_dyn().dims().horizon,
        problem.features(),
        cfg.width,
        cfg.depth,
        Activation::parse(&cfg.activation)?,
        cfg.pin_terminal,
        cfg.init_seed,
    )?)
}

pub fn load_checkpoint(path: &Path, problem: &Problem) -> Result<GeneratingFunction, CliError> {
    let gen = GeneratingFunction::read_checkpoint(read_bytes(path)?.as_slice())?;
    let dims = problem.as_dyn().dims();
    if gen.horizon() != dims.horizon || gen.features().state_dim() != dims.state {
        return Err(AdrlError::config(format!("checkpoint {} does not match the problem", path.display())).into());
    }
    Ok(gen)
}

/// An output directory with its manifest.
pub struct Run {
    pub dir: PathBuf,
}

impl Run {
    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents).map_err(|e| CliError::Core(e.into()))
    }
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(o) = &cli.out {
        return o.clone();
    }
    if let Some(env) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    if !cfg.out_dir.is_empty() {
        return PathBuf::from(&cfg.out_dir);
    }
    PathBuf::from("adrl-out").join(cli.command.name())
}

fn record_file(path: &Path, slot: &mut Option<String>, hash: &mut Option<String>) -> Result<(), CliError> {
    *hash = Some(sha256_hex(&read_bytes(path)?));
    *slot = Some(path.display().to_string());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (mut cfg, mut inputs) = config::load(cli.config.as_deref(), &cli.set)?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cfg.workers > 0 {
        adrl_core::parallel::set_worker_count(cfg.workers);
    }
    // command-line flags win over manifest inputs
    let mut checkpoint: Option<PathBuf> = inputs.checkpoint.as_ref().map(PathBuf::from);
    let mut bounds: Option<PathBuf> = inputs.bounds.as_ref().map(PathBuf::from);
    match &cli.command {
        Command::TrainAdrl { iters, estimator, seed, init } => {
            if let Some(i) = iters {
                cfg.iterations = *i;
            }
            if let Some(e) = estimator {
                cfg.estimator = e.clone();
            }
            if let Some(s) = seed {
                cfg.train_seed = *s;
            }
            if init.is_some() {
                checkpoint = init.clone();
            }
        }
        Command::DualBound { checkpoint: c, dataset_seed } => {
            if c.is_some() {
                checkpoint = c.clone();
            }
            if let Some(s) = dataset_seed {
                cfg.dual_seed = *s;
            }
        }
        Command::EvalPolicy { policy, checkpoint: c } => {
            if c.is_some() {
                checkpoint = c.clone();
            }
            inputs.policy = Some(policy.clone());
        }
        Command::GapReport { checkpoint: c, oracle_pinned } => {
            if c.is_some() {
                checkpoint = c.clone();
            }
            inputs.oracle_pinned |= *oracle_pinned;
        }
        Command::Derm { bounds: b } => {
            if b.is_some() {
                bounds = b.clone();
            }
        }
        Command::Oracle | Command::DumpModel | Command::Selftest => {}
    }

    let (problem, model_hash) = build_problem(&cfg)?;
    inputs.model_sha256 = model_hash;
    inputs.checkpoint = None;
    inputs.checkpoint_sha256 = None;
    inputs.bounds = None;
    inputs.bounds_sha256 = None;
    if let Some(c) = &checkpoint {
        record_file(c, &mut inputs.checkpoint, &mut inputs.checkpoint_sha256)?;
    }
    if let Some(b) = &bounds {
        record_file(b, &mut inputs.bounds, &mut inputs.bounds_sha256)?;
    }

    let run = Run { dir: out_dir(cli, &cfg) };
    fs::create_dir_all(&run.dir).map_err(|e| CliError::Core(e.into()))?;
    let manifest = Manifest {
        subcommand: cli.command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        inputs: inputs.clone(),
        model: problem.model_table(),
    };
    run.write("manifest.toml", toml::to_string(&manifest).map_err(|e| CliError::Usage(e.to_string()))?)?;

    let summary = match &cli.command {
        Command::TrainAdrl { .. } => train(&cfg, &problem, checkpoint.as_deref(), &run)?,
        Command::DualBound { .. } => dual_bound(&cfg, &problem, checkpoint.as_deref(), &run)?,
        Command::EvalPolicy { policy, .. } => eval_policy(&cfg, &problem, policy, checkpoint.as_deref(), &run)?,
        Command::Oracle => oracle(&cfg, &problem, &run)?,
        Command::Derm { .. } => derm(&cfg, &problem, bounds.as_deref(), &run)?,
        Command::GapReport { .. } => gap_report(&cfg, &problem, checkpoint.as_deref(), inputs.oracle_pinned, &run)?,
        Command::DumpModel => dump_model(&cfg, &problem, &run)?,
        Command::Selftest => {
            let report = selftest::run_suite();
            run.write("selftest.txt", &report.text)?;
            print!("{}", report.text);
            if report.failed > 0 {
                return Err(CliError::Selftest(format!("{} of {} checks failed", report.failed, report.total)));
            }
            return Ok(());
        }
    };
    run.write("summary.txt", &summary.text)?;
    print!("{}", summary.text);
    match summary.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Human-readable result of a subcommand; `failure` turns a run that still
/// wrote its artifacts into a nonzero exit.
pub struct Summary {
    pub text: String,
    pub failure: Option<CliError>,
}

impl From<String> for Summary {
    fn from(text: String) -> Self {
        Summary { text, failure: None }
    }
}

fn write_checkpoint(run: &Run, name: &str, gen: &GeneratingFunction) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    gen.write_checkpoint(&mut bytes)?;
    run.write(name, bytes)
}

fn train(cfg: &RunConfig, problem: &Problem, init: Option<&Path>, run: &Run) -> Result<Summary, CliError> {
    let tc = train_config(cfg, problem)?;
    let gen = match init {
        Some(p) => load_checkpoint(p, problem)?,
        None => initial_generating_function(cfg, problem)?,
    };
    write_checkpoint(run, "init.ckpt", &gen)?;
    let out = train_adrl_with(problem.as_dyn(), &tc, gen, |g| {
        if tc.checkpoint_every > 0 {
            write_checkpoint(run, &format!("ckpt_{:06}.ckpt", g.iteration), g).map_err(|e| match e {
                CliError::Core(c) => c,
                other => AdrlError::config(other.to_string()),
            })?;
        }
        Ok(())
    })?;
    write_checkpoint(run, "final.ckpt", &out.gen)?;
    let mut params = Vec::new();
    out.gen.write_csv(&mut params)?;
    run.write("final_params.csv", params)?;
    let trace = out.trace.to_csv();
    run.write("trace.csv", &trace)?;
    run.write("timing.csv", out.trace.timing_csv())?;

    let mut text = String::new();
    let _ = writeln!(text, "iterations = {}", out.gen.iteration);
    let _ = writeln!(text, "final_checkpoint_hash = \"{}\"", out.gen.hash());
    let aborted = out.trace.records.iter().filter(|r| r.aborted).count();
    let _ = writeln!(text, "aborted_iterations = {aborted}");
    if let Some(h) = &out.halted {
        let _ = writeln!(text, "halted = \"{h}\"");
    }
    let reference = problem.reference_value(cfg)?;
    if let Some(r) = reference {
        let _ = writeln!(text, "reference_value = {r:?}");
    }
    let evals: Vec<_> = out.trace.evaluations().collect();
    if let (Some((i0, first)), Some((_, last))) = (evals.first(), evals.last()) {
        let _ = writeln!(text, "initial_eval_iteration = {i0}");
        let _ = writeln!(text, "initial_dual_mean = {:?}", first.dual.mean);
        let _ = writeln!(text, "initial_dual_stderr = {:?}", first.dual.stderr);
        text.push_str(&last.to_kv());
        let (csv, svg) = emit_learning_curve(&trace, reference)?;
        run.write("learning_curve.csv", csv)?;
        run.write("learning_curve.svg", svg)?;
    }
    let failure = out.halted.map(|h| CliError::Core(AdrlError::numerical(h)));
    Ok(Summary { text, failure })
}

fn value_from<'a>(problem: &'a Problem, gen: &'a GeneratingFunction) -> NetworkValue<'a, dyn ControlProblem + 'a> {
    NetworkValue::new(problem.as_dyn(), gen)
}

fn generating_function(cfg: &RunConfig, problem: &Problem, checkpoint: Option<&Path>) -> Result<GeneratingFunction, CliError> {
    match checkpoint {
        Some(p) => load_checkpoint(p, problem),
        None => initial_generating_function(cfg, problem),
    }
}

fn dual_dataset(problem: &Problem, bc: &BoundConfig) -> Result<NoiseDataset, CliError> {
    Ok(if bc.enumerate {
        enumerate_noise_dataset(problem.as_dyn())?
    } else {
        sample_noise_dataset(problem.as_dyn(), bc.dual_paths, bc.dual_paths, bc.dual_seed)?
    })
}

fn primal_dataset(problem: &Problem, bc: &BoundConfig) -> Result<NoiseDataset, CliError> {
    Ok(if bc.enumerate {
        enumerate_noise_dataset(problem.as_dyn())?
    } else {
        sample_noise_dataset(problem.as_dyn(), bc.primal_paths, bc.primal_paths, bc.primal_seed)?
    })
}

fn estimate_lines(text: &mut String, prefix: &str, e: &Estimate) {
    let (lo, hi) = e.ci95();
    let _ = writeln!(text, "{prefix}_mean = {:?}", e.mean);
    let _ = writeln!(text, "{prefix}_stderr = {:?}", e.stderr);
    let _ = writeln!(text, "{prefix}_ci95 = [{lo:?}, {hi:?}]");
    let _ = writeln!(text, "{prefix}_paths = {}", e.count);
}

fn dual_bound(cfg: &RunConfig, problem: &Problem, checkpoint: Option<&Path>, run: &Run) -> Result<Summary, CliError> {
    let gen = generating_function(cfg, problem, checkpoint)?;
    let value = value_from(problem, &gen);
    let bc = bound_config(cfg, problem);
    let ds = dual_dataset(problem, &bc)?;
    let ctx = PenaltyContext::new(problem.as_dyn(), &value, bc.inner)?;
    let est = dual_value(&ctx, problem.as_dyn(), &ds, &bc.solver)?;
    let mut csv = String::from("path_id,Y_star,solver_iters,kkt_residual\n");
    for (r, y) in est.results.iter().zip(&est.per_path) {
        let _ = writeln!(csv, "{},{y:?},{},{:?}", r.path_id, r.iterations, r.kkt_residual);
    }
    run.write("dual_paths.csv", csv)?;
    let mut text = String::new();
    estimate_lines(&mut text, "dual", &est.native);
    let _ = writeln!(text, "nonconverged_paths = {}", est.nonconverged);
    let _ = writeln!(text, "checkpoint_hash = \"{}\"", gen.hash());
    let _ = writeln!(text, "dual_seed = {}", bc.dual_seed);
    Ok(text.into())
}

fn eval_policy(
    cfg: &RunConfig,
    problem: &Problem,
    policy: &str,
    checkpoint: Option<&Path>,
    run: &Run,
) -> Result<Summary, CliError> {
    let bc = bound_config(cfg, problem);
    let ds = primal_dataset(problem, &bc)?;
    let p = problem.as_dyn();
    let gen;
    let mut hash = String::new();
    let totals = match policy {
        "greedy" => {
            gen = generating_function(cfg, problem, checkpoint)?;
            hash = gen.hash();
            let value = value_from(problem, &gen);
            policy_totals(p, &GreedyPolicy::new(p, &value, bc.greedy, bc.solver), &ds)?
        }
        "uniform" => policy_totals(p, &|t: usize, s: &[f64]| p.nominal_action(t, s), &ds)?,
        "closed-form" => policy_totals(p, &exec_closed_form(problem.exec()?.model())?, &ds)?,
        "oracle" => {
            let Problem::Toy(toy) = problem else {
                return Err(AdrlError::Unsupported("the oracle policy needs the toy problem".into()).into());
            };
            let o = dp_oracle_discrete(toy, cfg.grid_points)?;
            policy_totals(p, &o as &dyn Policy, &ds)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown policy `{other}` (expected greedy, uniform, closed-form or oracle)"
            )))
        }
    };
    let mut csv = String::from("path_id,total\n");
    for (path, v) in ds.paths().iter().zip(&totals) {
        let _ = writeln!(csv, "{},{v:?}", path.path_id);
    }
    run.write("policy_paths.csv", csv)?;
    let est = match ds.weights() {
        Some(w) => Estimate::from_weighted(&totals, w),
        None => Estimate::from_samples(&totals),
    };
    let mut text = format!("policy = \"{policy}\"\n");
    estimate_lines(&mut text, "value", &est);
    if !hash.is_empty() {
        let _ = writeln!(text, "checkpoint_hash = \"{hash}\"");
    }
    let _ = writeln!(text, "primal_seed = {}", bc.primal_seed);
    Ok(text.into())
}

fn oracle(cfg: &RunConfig, problem: &Problem, run: &Run) -> Result<Summary, CliError> {
    let Problem::Toy(toy) = problem else {
        return Err(AdrlError::Unsupported("the oracle needs a finite-noise toy problem".into()).into());
    };
    let o = dp_oracle_discrete(toy, cfg.grid_points)?;
    let mut csv = String::from("t,state,value,action\n");
    for t in 0..=o.horizon() {
        for s in o.states(t) {
            let v = o.value(t, &s).expect("reachable state");
            let a = o.action(t, &s).map_or(String::new(), |a| format!("{:?}", a[0]));
            let _ = writeln!(csv, "{t},{:?},{v:?},{a}", s[0]);
        }
    }
    run.write("oracle.csv", csv)?;
    Ok(format!(
        "initial_value = {:?}\nnodes = {}\ngrid_points = {}\n",
        o.initial_value(),
        o.node_count(),
        cfg.grid_points
    )
    .into())
}

/// `dual_mean`, `primal_mean` and `sense` from a report's `key = value` lines.
pub fn read_bounds(text: &str) -> Result<(Sense, f64, f64), CliError> {
    let mut sense = None;
    let mut dual = None;
    let mut primal = None;
    for line in text.lines() {
        if line.starts_with('[') {
            break;
        }
        let Some((k, v)) = line.split_once('=') else { continue };
        let v = v.trim().trim_matches('"');
        match k.trim() {
            "sense" => sense = Some(if v == "maximize" { Sense::Maximize } else { Sense::Minimize }),
            "dual_mean" => dual = v.parse::<f64>().ok(),
            "primal_mean" => primal = v.parse::<f64>().ok(),
            _ => {}
        }
    }
    match (sense, dual, primal) {
        (Some(s), Some(d), Some(p)) if d.is_finite() && p.is_finite() => Ok((s, d, p)),
        _ => Err(CliError::Usage("bounds file needs sense, dual_mean and primal_mean".into())),
    }
}

pub fn derm_config(cfg: &RunConfig, dual_bound: Option<f64>) -> Result<DermConfig, CliError> {
    Ok(DermConfig {
        width: cfg.derm_width,
        depth: cfg.derm_depth,
        activation: Activation::parse(&cfg.derm_activation)?,
        iterations: cfg.derm_iterations,
        learning_rate: cfg.derm_learning_rate,
        optimizer: match cfg.derm_optimizer.as_str() {
            "adam" => DermOptimizer::Adam,
            "sgd" => DermOptimizer::Sgd,
            other => return Err(CliError::Usage(format!("derm_optimizer: unknown optimizer `{other}`"))),
        },
        eval_every: cfg.derm_eval_every,
        eval_paths: cfg.derm_eval_paths,
        eval_seed: cfg.derm_eval_seed,
        seed: cfg.derm_seed,
        dual_bound,
    })
}

fn derm(cfg: &RunConfig, problem: &Problem, bounds: Option<&Path>, run: &Run) -> Result<Summary, CliError> {
    let exec = problem.exec()?;
    let bounds = match (bounds, cfg.derm_dual_bound, cfg.derm_primal_bound) {
        (Some(path), _, _) => {
            let text = String::from_utf8_lossy(&read_bytes(path)?).into_owned();
            Some(read_bounds(&text)?)
        }
        (None, Some(d), Some(p)) => Some((exec.sense(), d, p)),
        (None, None, None) => None,
        _ => return Err(CliError::Usage("derm_dual_bound and derm_primal_bound go together".into())),
    };
    let dataset = sample_noise_dataset(exec, cfg.derm_paths, cfg.derm_paths, cfg.derm_data_seed)?;
    let dc = derm_config(cfg, bounds.map(|(_, d, _)| d))?;
    let out = derm_train(exec, &dataset, &dc)?;
    run.write("derm_trace.csv", out.trace_csv())?;

    let mut text = String::new();
    if let Some(last) = out.records.last() {
        let _ = writeln!(text, "final_iteration = {}", last.iteration);
        let _ = writeln!(text, "final_train_loss = {:?}", last.train_loss);
    }
    if let Some(e) = out.records.iter().rev().find_map(|r| r.eval) {
        estimate_lines(&mut text, "final_eval", &e);
    }
    if let Some(h) = &out.halted {
        let _ = writeln!(text, "halted = \"{h}\"");
    }
    if let Some((sense, d, p)) = bounds {
        let report = BoundReport::assemble(sense, Estimate::exact(d, 1), Estimate::exact(p, 1));
        let _ = writeln!(text, "dual_bound = {d:?}");
        let _ = writeln!(text, "primal_bound = {p:?}");
        match out.overfit_at {
            Some(i) => {
                let _ = writeln!(text, "overfit_at = {i}");
            }
            None => text.push_str("overfit_at = \"none\"\n"),
        }
        let rec = derm_stopping_rule(&out.train_trace(), &report);
        let (rule, it) = match rec {
            StopRecommendation::Bracketed(i) => ("bracketed", Some(i)),
            StopRecommendation::BeforeCrossing(i) => ("before-crossing", Some(i)),
            StopRecommendation::NeverBracketed => ("never-bracketed", None),
        };
        let _ = writeln!(text, "stop_rule = \"{rule}\"");
        match it {
            Some(i) => {
                let _ = writeln!(text, "stop_iteration = {i}");
            }
            None => text.push_str("stop_iteration = \"none\"\n"),
        }
        let _ = writeln!(text, "overfit_warning = {}", rec.overfit_warning());
    }
    let failure = out.halted.map(|h| CliError::Core(AdrlError::numerical(h)));
    Ok(Summary { text, failure })
}

fn gap_report(
    cfg: &RunConfig,
    problem: &Problem,
    checkpoint: Option<&Path>,
    oracle_pinned: bool,
    run: &Run,
) -> Result<Summary, CliError> {
    let bc = bound_config(cfg, problem);
    let mut report = if oracle_pinned {
        let Problem::Toy(toy) = problem else {
            return Err(AdrlError::Unsupported("oracle-pinned values need the toy problem".into()).into());
        };
        let w = dp_oracle_discrete(toy, cfg.grid_points)?.tabular_value()?;
        bound_report(toy, &w as &dyn ValueFunction, &bc, Some("oracle".into()))?
    } else {
        let gen = generating_function(cfg, problem, checkpoint)?;
        let value = value_from(problem, &gen);
        bound_report(problem.as_dyn(), &value, &bc, Some(gen.hash()))?
    };
    if bc.enumerate {
        report.dual_seed = 0;
        report.primal_seed = 0;
    }
    let mut text = report.to_kv();
    if let Some(r) = problem.reference_value(cfg)? {
        let _ = writeln!(text, "reference_value = {r:?}");
    }
    if let Some(model) = problem.model_table() {
        text.push_str("\n[model]\n");
        text.push_str(&toml::to_string(&model).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    run.write("report.txt", &text)?;
    Ok(text.into())
}

fn dump_model(cfg: &RunConfig, problem: &Problem, run: &Run) -> Result<Summary, CliError> {
    let mut text = String::from("# resolved configuration (all keys)\n");
    text.push_str(&cfg.to_toml());
    run.write("config.toml", cfg.to_toml())?;
    if let Problem::Exec(p) = problem {
        let model = p.model().to_config().to_toml();
        run.write("model.toml", &model)?;
        run.write("model.csv", p.model().dump_csv())?;
        text.push_str("\n# resolved model\n");
        text.push_str(&model);
    }
    Ok(text.into())
}

