use nalgebra::DMatrix;

use crate::control::{ControlProblem, Policy};
use crate::error::{AdrlError, Result};
use crate::neural::FeatureMap;

pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Per-stage linear map from features to actions.
#[derive(Clone, Debug)]
pub struct LinearSurrogate {
    features: FeatureMap,
    intercept: bool,
    /// One `action_dim × design_dim` matrix per stage (`None` if the stage
    /// had no samples).
    coeffs: Vec<Option<DMatrix<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateFit {
    /// In-sample root mean squared error over all stages and coordinates.
    pub rmse: f64,
    /// Stages where the design was rank deficient and ridge was used.
    pub ridge_stages: Vec<usize>,
}

impl LinearSurrogate {
    fn design_row(&self, state: &[f64], buf: &mut Vec<f64>) {
        self.features.apply(state, buf);
        if self.intercept {
            buf.insert(0, 1.0);
        }
    }

    pub fn predict(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        let c = self
            .coeffs
            .get(t)
            .and_then(Option::as_ref)
            .ok_or_else(|| AdrlError::Range(format!("surrogate has no fit for t = {t}")))?;
        let mut row = Vec::new();
        self.design_row(state, &mut row);
        Ok((0..c.nrows()).map(|i| c.row(i).iter().zip(&row).map(|(a, b)| a * b).sum()).collect())
    }

    /// The surrogate with outputs projected onto the feasible actions.
    pub fn policy<'a, P: ControlProblem + ?Sized>(&'a self, problem: &'a P) -> ProjectedSurrogate<'a, P> {
        ProjectedSurrogate { problem, surrogate: self }
    }
}

pub struct ProjectedSurrogate<'a, P: ?Sized> {
    problem: &'a P,
    surrogate: &'a LinearSurrogate,
}

impl<P: ControlProblem + ?Sized> Policy for ProjectedSurrogate<'_, P> {
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.surrogate.predict(t, state)?;
        self.problem.project_action(t, state, &mut a);
        Ok(a)
    }
}

/// Least-squares fit of `policy`'s actions on `features` of the sampled
/// `(t, state)` pairs, separately per stage and action coordinate.
///
/// Falls back to ridge regression with `λ = 1e-6` when a stage's design
/// matrix is rank deficient.
pub fn fit_policy_surrogate<Q: Policy + ?Sized>(
    policy: &Q,
    features: &FeatureMap,
    horizon: usize,
    samples: &[(usize, Vec<f64>)],
) -> Result<(LinearSurrogate, SurrogateFit)> {
    let intercept = !matches!(features, FeatureMap::Quadratic { .. });
    let mut sur = LinearSurrogate { features: features.clone(), intercept, coeffs: vec![None; horizon] };
    let width = features.output_dim() + usize::from(intercept);
    let mut ridge_stages = Vec::new();
    let mut sq_err = 0.0;
    let mut count = 0usize;
    for t in 0..horizon {
        let states: Vec<&Vec<f64>> = samples.iter().filter(|(st, _)| *st == t).map(|(_, s)| s).collect();
        if states.is_empty() {
            continue;
        }
        if states.len() < width {
            return Err(AdrlError::config(format!(
                "stage {t} has {} samples, need at least {width}",
                states.len()
            )));
        }
        let targets = states.iter().map(|s| policy.act(t, s)).collect::<Result<Vec<_>>>()?;
        let n_out = targets[0].len();
        let mut row = Vec::new();
        let mut x = DMatrix::zeros(states.len(), width);
        for (i, s) in states.iter().enumerate() {
            sur.design_row(s, &mut row);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        let y = DMatrix::from_fn(states.len(), n_out, |i, j| targets[i][j]);
        let svd = x.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.rank(smax * 1e-10 * states.len().max(width) as f64);
        let beta = if rank == width {
            svd.solve(&y, 0.0).map_err(|e| AdrlError::numerical(e.to_string()))?
        } else {
            ridge_stages.push(t);
            let gram = x.transpose() * &x + DMatrix::identity(width, width) * RIDGE_LAMBDA;
            gram.cholesky()
                .ok_or_else(|| AdrlError::numerical("ridge system is singular"))?
                .solve(&(x.transpose() * &y))
        };
        let resid = &x * &beta - &y;
        sq_err += resid.iter().map(|r| r * r).sum::<f64>();
        count += resid.len();
        sur.coeffs[t] = Some(beta.transpose());
    }
    if count == 0 {
        return Err(AdrlError::config("no state samples to fit"));
    }
    Ok((sur, SurrogateFit { rmse: (sq_err / count as f64).sqrt(), ridge_stages }))
}
