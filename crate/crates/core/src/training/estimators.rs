use crate::control::{ControlProblem, NoiseDataset};
use crate::duality::{inner_solve, DualSolveResult, Expectation, NetworkValue, PenaltyContext, SolverConfig};
use crate::error::{AdrlError, Result};
use crate::neural::GeneratingFunction;
use crate::parallel::map_indexed;
use crate::rng::{rademacher, stream, Purpose};

/// Largest fraction of a batch that may be dropped for inner-solver
/// non-convergence before the iteration is aborted.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

/// Gradient of the dual objective (internal sense) with respect to every
/// parameter of a generating function.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// Weighted mean pathwise objective over the paths used, internal sense.
    pub objective: f64,
    pub used: usize,
    pub excluded: usize,
}

fn path_weight(dataset: &NoiseDataset, i: usize) -> f64 {
    dataset.weights().map_or(1.0, |w| w[i])
}

fn check_exclusions(excluded: usize, batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(AdrlError::config("empty batch"));
    }
    if excluded as f64 > MAX_EXCLUDED_FRACTION * batch as f64 {
        return Err(AdrlError::numerical(format!(
            "inner solver failed on {excluded} of {batch} paths; iteration aborted"
        )));
    }
    Ok(())
}

/// Inner maximisers for the paths `indices` of `dataset`, with optional
/// warm starts indexed like `indices`.
pub fn solve_batch<P: ControlProblem + ?Sized>(
    ctx: &PenaltyContext<'_>,
    problem: &P,
    dataset: &NoiseDataset,
    indices: &[usize],
    warm: Option<&[Option<Vec<f64>>]>,
    solver: &SolverConfig,
) -> Result<Vec<DualSolveResult>> {
    map_indexed(indices.len(), |j| {
        let w = warm.and_then(|w| w[j].as_deref());
        inner_solve(ctx, problem, &dataset.paths()[indices[j]], w, solver)
    })
    .into_iter()
    .collect()
}

/// Robbins-Monro estimate from already computed inner maximisers:
/// `-Σ_t [∇_φ ϱ_{t+1}(s_{t+1}) - Ê ∇_φ ϱ_{t+1}(f_t(s_t, a*_t, η))]` averaged over
/// the converged paths, using the same expectation nodes as the solves.
pub fn rm_gradient_from<P: ControlProblem + ?Sized>(
    ctx: &PenaltyContext<'_>,
    problem: &P,
    gen: &GeneratingFunction,
    dataset: &NoiseDataset,
    indices: &[usize],
    results: &[DualSolveResult],
) -> Result<GradientEstimate> {
    let excluded = results.iter().filter(|r| !r.converged).count();
    check_exclusions(excluded, indices.len())?;
    let total_w: f64 = indices
        .iter()
        .zip(results)
        .filter(|(_, r)| r.converged)
        .map(|(&i, _)| path_weight(dataset, i))
        .sum();
    let per_path = map_indexed(indices.len(), |j| {
        let r = &results[j];
        if !r.converged {
            return None;
        }
        let local = match ctx.for_path(problem, r.path_id) {
            Ok(local) => local,
            Err(e) => return Some(Err(e)),
        };
        let mut g = vec![0.0; gen.param_count()];
        let w = path_weight(dataset, indices[j]) / total_w;
        local.as_ref().unwrap_or(ctx).accumulate_penalty_param_grad(problem, gen, &r.states, &r.actions, -w, &mut g);
        Some(Ok((w * r.objective, g)))
    });
    let mut grad = vec![0.0; gen.param_count()];
    let mut objective = 0.0;
    for item in per_path.into_iter().flatten() {
        let (obj, g) = item?;
        objective += obj;
        grad.iter_mut().zip(g).for_each(|(a, v)| *a += v);
    }
    Ok(GradientEstimate { grad, objective, used: indices.len() - excluded, excluded })
}

/// Robbins-Monro gradient: solve every path of the batch, then apply the
/// envelope formula at the maximisers.
pub fn rm_gradient<P: ControlProblem + ?Sized>(
    ctx: &PenaltyContext<'_>,
    problem: &P,
    gen: &GeneratingFunction,
    dataset: &NoiseDataset,
    indices: &[usize],
    solver: &SolverConfig,
) -> Result<GradientEstimate> {
    let results = solve_batch(ctx, problem, dataset, indices, None, solver)?;
    rm_gradient_from(ctx, problem, gen, dataset, indices, &results)
}

/// Rademacher direction over the trainable blocks (zero elsewhere), drawn
/// from stream `(seed, Spsa, b, 0)`.
pub fn rademacher_direction(gen: &GeneratingFunction, seed: u64, b: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Spsa, b, 0);
    let mut delta = vec![0.0; gen.param_count()];
    for t in 0..=gen.horizon() {
        if gen.is_trainable(t) {
            for d in &mut delta[gen.block_range(t)] {
                *d = rademacher(&mut rng);
            }
        }
    }
    delta
}

/// Simultaneous-perturbation estimate `(f(φ + cΔ) - f(φ - cΔ)) / (2c) · Δ⁻¹`
/// over the non-zero entries of `delta`.
pub fn spsa_estimate<F>(phi: &[f64], delta: &[f64], c: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(c > 0.0) {
        return Err(AdrlError::config("SPSA perturbation must be positive"));
    }
    let shifted = |sign: f64| -> Vec<f64> { phi.iter().zip(delta).map(|(p, d)| p + sign * c * d).collect() };
    let diff = (f(&shifted(1.0))? - f(&shifted(-1.0))?) / (2.0 * c);
    Ok(delta.iter().map(|&d| if d == 0.0 { 0.0 } else { diff / d }).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpsaEstimate {
    pub grad: Vec<f64>,
    /// Batch objectives at `φ ± cΔ`, internal sense.
    pub plus: f64,
    pub minus: f64,
    pub excluded: usize,
    /// Maximisers at `φ + cΔ`, usable as warm starts.
    pub results: Vec<DualSolveResult>,
}

/// SPSA gradient of the batch dual objective: two inner solves per path,
/// at `φ + cΔ` and `φ - cΔ`, both with the expectation nodes of `scheme`.
/// Paths that fail to converge at either point are dropped from both.
#[allow(clippy::too_many_arguments)]
pub fn spsa_gradient<P: ControlProblem + ?Sized>(
    problem: &P,
    gen: &GeneratingFunction,
    scheme: Expectation,
    dataset: &NoiseDataset,
    indices: &[usize],
    delta: &[f64],
    c: f64,
    warm: Option<&[Option<Vec<f64>>]>,
    solver: &SolverConfig,
) -> Result<SpsaEstimate> {
    if !(c > 0.0) {
        return Err(AdrlError::config("SPSA perturbation must be positive"));
    }
    let solve_at = |sign: f64| -> Result<Vec<DualSolveResult>> {
        let mut g = gen.clone();
        let params: Vec<f64> = gen.params().iter().zip(delta).map(|(p, d)| p + sign * c * d).collect();
        g.set_params(&params)?;
        let value = NetworkValue::new(problem, &g);
        let ctx = PenaltyContext::new(problem, &value, scheme)?;
        solve_batch(&ctx, problem, dataset, indices, warm, solver)
    };
    let plus = solve_at(1.0)?;
    let minus = solve_at(-1.0)?;
    let ok: Vec<bool> = plus.iter().zip(&minus).map(|(p, m)| p.converged && m.converged).collect();
    let excluded = ok.iter().filter(|o| !**o).count();
    check_exclusions(excluded, indices.len())?;
    let (mut wsum, mut fp, mut fm) = (0.0, 0.0, 0.0);
    for j in 0..indices.len() {
        if ok[j] {
            let w = path_weight(dataset, indices[j]);
            wsum += w;
            fp += w * plus[j].objective;
            fm += w * minus[j].objective;
        }
    }
    let (fp, fm) = (fp / wsum, fm / wsum);
    let diff = (fp - fm) / (2.0 * c);
    let grad = delta.iter().map(|&d| if d == 0.0 { 0.0 } else { diff / d }).collect();
    Ok(SpsaEstimate { grad, plus: fp, minus: fm, excluded, results: plus })
}

/// Gain sequences `γ_b = γ_0 / (b + A)^α` and `c_b = c_0 / b^γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpsaSchedule {
    pub gamma0: f64,
    pub c0: f64,
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl SpsaSchedule {
    /// Standard exponents 0.602 and 0.101 with `A` at 10% of the run.
    pub fn for_run(gamma0: f64, c0: f64, iterations: usize) -> Self {
        SpsaSchedule { gamma0, c0, stability: 0.1 * iterations as f64, alpha: 0.602, gamma: 0.101 }
    }

    /// Step size at iteration `b ≥ 1`.
    pub fn step(&self, b: usize) -> f64 {
        self.gamma0 / (b as f64 + self.stability).powf(self.alpha)
    }

    /// Perturbation size at iteration `b ≥ 1`.
    pub fn perturbation(&self, b: usize) -> f64 {
        self.c0 / (b.max(1) as f64).powf(self.gamma)
    }
}
