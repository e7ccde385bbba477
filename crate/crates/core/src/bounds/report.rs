use std::fmt::Write as _;

use super::greedy::GreedyPolicy;
use crate::control::{enumerate_noise_dataset, evaluate_policy, sample_noise_dataset, ControlProblem, Sense};
use crate::duality::{dual_value, Expectation, PenaltyContext, SolverConfig, ValueFunction};
use crate::error::Result;
use crate::stats::{Estimate, Z95};

/// How bounds are estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConfig {
    /// Use the full enumerated noise tree instead of samples (finite noise only).
    pub enumerate: bool,
    pub dual_paths: usize,
    pub dual_seed: u64,
    pub primal_paths: usize,
    pub primal_seed: u64,
    pub inner: Expectation,
    pub greedy: Expectation,
    pub solver: SolverConfig,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            enumerate: false,
            dual_paths: 1000,
            dual_seed: 101,
            primal_paths: 1000,
            primal_seed: 202,
            inner: Expectation::MonteCarlo { samples: 2000, seed: 303, round: 0 },
            greedy: Expectation::MonteCarlo { samples: 2000, seed: 404, round: 0 },
            solver: SolverConfig::default(),
        }
    }
}

/// Dual and primal bounds with their gap, in the native sense.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub sense: Sense,
    pub dual: Estimate,
    pub primal: Estimate,
    /// `|primal - dual| / |dual|` (absolute when the dual is zero).
    pub gap: f64,
    /// Gap with the sign it has when both bounds are valid.
    pub signed_gap: f64,
    /// Standard error of the gap from the two independent estimates.
    pub gap_stderr: f64,
    pub duality_violation: bool,
    pub nonconverged: usize,
    pub checkpoint_hash: Option<String>,
    pub dual_seed: u64,
    pub primal_seed: u64,
}

/// Denominator of relative gaps: `|dual|`, or 1 when the dual is zero to
/// within 1e-9 so the gap stays finite.
pub fn gap_scale(dual: f64) -> f64 {
    if dual.abs() > 1e-9 {
        dual.abs()
    } else {
        1.0
    }
}

pub fn relative_gap(dual: f64, primal: f64) -> f64 {
    (primal - dual).abs() / gap_scale(dual)
}

impl BoundReport {
    /// Combines independent dual and primal estimates.
    pub fn assemble(sense: Sense, dual: Estimate, primal: Estimate) -> Self {
        let combined = dual.stderr.hypot(primal.stderr);
        // internal-sense excess of the dual over the primal
        let excess = sense.sign() * (dual.mean - primal.mean);
        BoundReport {
            sense,
            dual,
            primal,
            gap: relative_gap(dual.mean, primal.mean),
            signed_gap: excess / gap_scale(dual.mean),
            gap_stderr: combined / gap_scale(dual.mean),
            duality_violation: excess < -4.0 * combined,
            nonconverged: 0,
            checkpoint_hash: None,
            dual_seed: 0,
            primal_seed: 0,
        }
    }

    /// Flat `key = value` block.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Maximize => "maximize",
            Sense::Minimize => "minimize",
        };
        let (dl, dh) = self.dual.ci95();
        let (pl, ph) = self.primal.ci95();
        let _ = writeln!(out, "sense = \"{sense}\"");
        let _ = writeln!(out, "dual_mean = {:?}", self.dual.mean);
        let _ = writeln!(out, "dual_stderr = {:?}", self.dual.stderr);
        let _ = writeln!(out, "dual_ci95 = [{dl:?}, {dh:?}]");
        let _ = writeln!(out, "dual_paths = {}", self.dual.count);
        let _ = writeln!(out, "primal_mean = {:?}", self.primal.mean);
        let _ = writeln!(out, "primal_stderr = {:?}", self.primal.stderr);
        let _ = writeln!(out, "primal_ci95 = [{pl:?}, {ph:?}]");
        let _ = writeln!(out, "primal_paths = {}", self.primal.count);
        let _ = writeln!(out, "gap = {:?}", self.gap);
        let _ = writeln!(out, "gap_ci95_halfwidth = {:?}", Z95 * self.gap_stderr);
        let _ = writeln!(out, "duality_violation = {}", self.duality_violation);
        let _ = writeln!(out, "nonconverged_paths = {}", self.nonconverged);
        let _ = writeln!(out, "checkpoint_hash = \"{}\"", self.checkpoint_hash.as_deref().unwrap_or(""));
        let _ = writeln!(out, "dual_seed = {}", self.dual_seed);
        let _ = writeln!(out, "primal_seed = {}", self.primal_seed);
        out
    }
}

/// Dual value of the penalty built from `value`, and the value of the
/// greedy policy built from the same functions, on independent datasets.
/// With `primal_paths = 0` (and sampled data) only the dual is estimated and
/// the primal fields are NaN.
pub fn bound_report<P: ControlProblem + ?Sized>(
    problem: &P,
    value: &dyn ValueFunction,
    cfg: &BoundConfig,
    checkpoint_hash: Option<String>,
) -> Result<BoundReport> {
    let (dual_ds, primal_ds) = if cfg.enumerate {
        let ds = enumerate_noise_dataset(problem)?;
        (ds.clone(), Some(ds))
    } else {
        let primal_ds = if cfg.primal_paths > 0 {
            Some(sample_noise_dataset(problem, cfg.primal_paths, cfg.primal_paths, cfg.primal_seed)?)
        } else {
            None
        };
        (sample_noise_dataset(problem, cfg.dual_paths, cfg.dual_paths, cfg.dual_seed)?, primal_ds)
    };
    let ctx = PenaltyContext::new(problem, value, cfg.inner)?;
    let dual = dual_value(&ctx, problem, &dual_ds, &cfg.solver)?;
    let primal = match primal_ds {
        Some(ds) => evaluate_policy(problem, &GreedyPolicy::new(problem, value, cfg.greedy, cfg.solver), &ds)?,
        None => Estimate { mean: f64::NAN, stderr: f64::NAN, count: 0 },
    };
    let mut report = BoundReport::assemble(problem.sense(), dual.native, primal);
    report.nonconverged = dual.nonconverged;
    report.checkpoint_hash = checkpoint_hash;
    report.dual_seed = cfg.dual_seed;
    report.primal_seed = cfg.primal_seed;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::ZeroValue;
    use crate::envs::make_toy_chain;

    #[test]
    fn gap_arithmetic() {
        let r = BoundReport::assemble(Sense::Minimize, Estimate::exact(100.0, 1), Estimate::exact(102.0, 1));
        assert!((r.gap - 0.02).abs() < 1e-15);
        assert!(!r.duality_violation);
        assert!((relative_gap(607.47, 621.08) - 0.0224).abs() < 5e-5);
        assert_eq!(relative_gap(0.0, 1e-7), 1e-7);
    }

    #[test]
    fn violation_flag() {
        let dual = Estimate { mean: 105.0, stderr: 0.5, count: 100 };
        let primal = Estimate { mean: 100.0, stderr: 0.5, count: 100 };
        assert!(BoundReport::assemble(Sense::Minimize, dual, primal).duality_violation);
        assert!(!BoundReport::assemble(Sense::Maximize, dual, primal).duality_violation);
    }

    #[test]
    fn enumerated_toy_report() {
        let p = make_toy_chain(2).unwrap();
        let cfg = BoundConfig { enumerate: true, inner: Expectation::Exact, greedy: Expectation::Exact, ..BoundConfig::default() };
        let r = bound_report(&p, &ZeroValue, &cfg, Some("abc".into())).unwrap();
        // perfect information: E[ξ_1^+ + ξ_2^+] = 1
        assert!((r.dual.mean - 1.0).abs() < 1e-12);
        assert_eq!(r.primal.mean, 0.0);
        assert!(r.to_kv().contains("checkpoint_hash = \"abc\""));
    }
}
