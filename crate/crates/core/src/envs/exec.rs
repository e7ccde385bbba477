//! Multi-asset optimal execution with linear permanent impact and an AR(1)
//! predictive signal.
//!
//! Stages are 0-based: stage `t` trades `a_t` from state
//! `(P_{t-1}, X_t, R_t)` (prices before the trade, current signal, shares
//! still to buy). The trade moves prices to
//! `P_t = P_{t-1} + A a_t + B X_t + ε_t`, the signal evolves as
//! `X_{t+1} = C X_t + η_{t+1}` and `R_{t+1} = R_t - a_t`. The last stage is
//! forced to buy whatever remains.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::simplex::{project_hyperplane, project_scaled_simplex};
use crate::control::{ConstraintResiduals, ControlProblem, Dims, NoiseModel, Sense};
use crate::error::{AdrlError, Result};
use crate::rng::{stream, Purpose};

/// Parameters of the execution market.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeExecModel {
    pub n_assets: usize,
    pub signal_dim: usize,
    pub horizon: usize,
    /// Permanent impact `A` (n×n, symmetric positive definite).
    pub impact: DMatrix<f64>,
    /// Signal loading `B` (n×m).
    pub signal_load: DMatrix<f64>,
    /// Signal autoregression `C` (m×m, spectral radius < 1).
    pub signal_ar: DMatrix<f64>,
    pub cov_eps: DMatrix<f64>,
    pub cov_eta: DMatrix<f64>,
    pub initial_price: DVector<f64>,
    /// Shares to acquire per asset, `R̄`.
    pub target: DVector<f64>,
    /// Signal at the first decision, `X_1`.
    pub initial_signal: DVector<f64>,
    pub no_shorting: bool,
}

impl TradeExecModel {
    /// Desk-scale defaults: `A = 0.005 (I + 0.3 J)/1.3`, `B` entries ±0.02
    /// from a seeded draw, `C = 0.5 I`, `Σ_ε = 0.05² I`, `Σ_η = 0.1² I`,
    /// `P_0 = 50`, `R̄ = 10`, `X_1 = 0`.
    pub fn pinned_default(
        n_assets: usize,
        signal_dim: usize,
        horizon: usize,
        no_shorting: bool,
        model_seed: u64,
    ) -> Result<Self> {
        let n = n_assets;
        let m = signal_dim;
        let impact = DMatrix::from_fn(n, n, |i, j| {
            0.005 * (if i == j { 1.0 } else { 0.0 } + 0.3) / 1.3
        });
        let mut rng = stream(model_seed, Purpose::Model, 0, 0);
        let signal_load =
            DMatrix::from_fn(n, m, |_, _| 0.02 * crate::rng::rademacher(&mut rng));
        let model = TradeExecModel {
            n_assets: n,
            signal_dim: m,
            horizon,
            impact,
            signal_load,
            signal_ar: DMatrix::identity(m, m) * 0.5,
            cov_eps: DMatrix::identity(n, n) * 0.05 * 0.05,
            cov_eta: DMatrix::identity(m, m) * 0.1 * 0.1,
            initial_price: DVector::from_element(n, 50.0),
            target: DVector::from_element(n, 10.0),
            initial_signal: DVector::zeros(m),
            no_shorting,
        };
        model.validate()?;
        Ok(model)
    }

    /// `n = 10`, `m = 3`, `T = 20`.
    pub fn full_scale(no_shorting: bool) -> Result<Self> {
        Self::pinned_default(10, 3, 20, no_shorting, 0)
    }

    /// `n = 3`, `m = 2`, `T = 5`.
    pub fn scaled_down(no_shorting: bool) -> Result<Self> {
        Self::pinned_default(3, 2, 5, no_shorting, 0)
    }

    /// Single asset, no signal loading.
    pub fn single_asset(theta: f64, target: f64, price: f64, horizon: usize) -> Result<Self> {
        let model = TradeExecModel {
            n_assets: 1,
            signal_dim: 1,
            horizon,
            impact: DMatrix::from_element(1, 1, theta),
            signal_load: DMatrix::zeros(1, 1),
            signal_ar: DMatrix::from_element(1, 1, 0.5),
            cov_eps: DMatrix::from_element(1, 1, 0.05 * 0.05),
            cov_eta: DMatrix::from_element(1, 1, 0.1 * 0.1),
            initial_price: DVector::from_element(1, price),
            target: DVector::from_element(1, target),
            initial_signal: DVector::zeros(1),
            no_shorting: false,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_assets, self.signal_dim);
        let shape = |name: &str, mat: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if mat.nrows() != r || mat.ncols() != c {
                return Err(AdrlError::model(format!(
                    "{name} is {}×{}, expected {r}×{c}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(AdrlError::model(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        if n == 0 || m == 0 || self.horizon == 0 {
            return Err(AdrlError::model("dimensions and horizon must be positive"));
        }
        shape("impact", &self.impact, n, n)?;
        shape("signal_load", &self.signal_load, n, m)?;
        shape("signal_ar", &self.signal_ar, m, m)?;
        shape("cov_eps", &self.cov_eps, n, n)?;
        shape("cov_eta", &self.cov_eta, m, m)?;
        for (name, v, len) in [
            ("initial_price", &self.initial_price, n),
            ("target", &self.target, n),
            ("initial_signal", &self.initial_signal, m),
        ] {
            if v.len() != len || v.iter().any(|x| !x.is_finite()) {
                return Err(AdrlError::model(format!("{name} must be a finite {len}-vector")));
            }
        }
        let asym = (&self.impact - self.impact.transpose()).abs().max();
        if asym > 1e-12 * self.impact.abs().max().max(1.0) {
            return Err(AdrlError::model("impact matrix must be symmetric"));
        }
        let min_eig = self.impact.clone().symmetric_eigenvalues().min();
        if min_eig <= 0.0 {
            return Err(AdrlError::model(format!(
                "impact matrix must be positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        let radius = self
            .signal_ar
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |r, z| r.max(z.norm()));
        if radius >= 1.0 {
            return Err(AdrlError::model(format!(
                "signal AR matrix has spectral radius {radius} >= 1 (not stationary)"
            )));
        }
        if self.no_shorting && self.target.iter().any(|r| *r < 0.0) {
            return Err(AdrlError::model("negative target is infeasible without shorting"));
        }
        self.noise_model()?;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_assets + self.signal_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.n_assets + self.signal_dim
    }

    /// Joint law of `(ε_t, η_{t+1})`: independent Gaussian blocks.
    pub fn noise_model(&self) -> Result<NoiseModel> {
        let (n, m) = (self.n_assets, self.signal_dim);
        let mut cov = DMatrix::zeros(n + m, n + m);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov_eps);
        cov.view_mut((n, n), (m, m)).copy_from(&self.cov_eta);
        NoiseModel::gaussian(vec![0.0; n + m], &cov)
    }

    pub fn initial_state(&self) -> ExecState {
        ExecState {
            price: self.initial_price.iter().copied().collect(),
            signal: self.initial_signal.iter().copied().collect(),
            remaining: self.target.iter().copied().collect(),
        }
    }

    /// Stationary standard deviation of each signal coordinate, from the
    /// discrete Lyapunov equation `S = C S Cᵀ + Σ_η` (fixed-point iteration).
    pub fn stationary_signal_std(&self) -> Vec<f64> {
        let c = &self.signal_ar;
        let mut s = self.cov_eta.clone();
        for _ in 0..2000 {
            let next = c * &s * c.transpose() + &self.cov_eta;
            let done = (&next - &s).abs().max() < 1e-15;
            s = next;
            if done {
                break;
            }
        }
        (0..self.signal_dim).map(|i| s[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Fully resolved parameters as TOML.
    pub fn to_config(&self) -> ExecModelConfig {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        ExecModelConfig {
            n_assets: Some(self.n_assets),
            signal_dim: Some(self.signal_dim),
            horizon: Some(self.horizon),
            no_shorting: Some(self.no_shorting),
            model_seed: None,
            impact: Some(mat(&self.impact)),
            signal_load: Some(mat(&self.signal_load)),
            signal_ar: Some(mat(&self.signal_ar)),
            cov_eps: Some(mat(&self.cov_eps)),
            cov_eta: Some(mat(&self.cov_eta)),
            initial_price: Some(self.initial_price.iter().copied().collect()),
            target: Some(self.target.iter().copied().collect()),
            initial_signal: Some(self.initial_signal.iter().copied().collect()),
        }
    }

    /// Every matrix and vector as `matrix,row,col,value` rows.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("matrix,row,col,value\n");
        let mut emit = |name: &str, m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let _ = writeln!(out, "{name},{i},{j},{:?}", m[(i, j)]);
                }
            }
        };
        emit("impact", &self.impact);
        emit("signal_load", &self.signal_load);
        emit("signal_ar", &self.signal_ar);
        emit("cov_eps", &self.cov_eps);
        emit("cov_eta", &self.cov_eta);
        emit("initial_price", &DMatrix::from_column_slice(self.n_assets, 1, self.initial_price.as_slice()));
        emit("target", &DMatrix::from_column_slice(self.n_assets, 1, self.target.as_slice()));
        emit(
            "initial_signal",
            &DMatrix::from_column_slice(self.signal_dim, 1, self.initial_signal.as_slice()),
        );
        let _ = writeln!(out, "horizon,0,0,{}", self.horizon);
        let _ = writeln!(out, "no_shorting,0,0,{}", u8::from(self.no_shorting));
        out
    }
}

/// Flat `key = value` model description. Unset keys fall back to the pinned
/// defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecModelConfig {
    pub n_assets: Option<usize>,
    pub signal_dim: Option<usize>,
    pub horizon: Option<usize>,
    pub no_shorting: Option<bool>,
    pub model_seed: Option<u64>,
    pub impact: Option<Vec<Vec<f64>>>,
    pub signal_load: Option<Vec<Vec<f64>>>,
    pub signal_ar: Option<Vec<Vec<f64>>>,
    pub cov_eps: Option<Vec<Vec<f64>>>,
    pub cov_eta: Option<Vec<Vec<f64>>>,
    pub initial_price: Option<Vec<f64>>,
    pub target: Option<Vec<f64>>,
    pub initial_signal: Option<Vec<f64>>,
}

impl ExecModelConfig {
    pub fn resolve(&self) -> Result<TradeExecModel> {
        let mut model = TradeExecModel::pinned_default(
            self.n_assets.unwrap_or(3),
            self.signal_dim.unwrap_or(2),
            self.horizon.unwrap_or(5),
            self.no_shorting.unwrap_or(true),
            self.model_seed.unwrap_or(0),
        )?;
        let to_mat = |name: &str, rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            let r = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|row| row.len() != c) {
                return Err(AdrlError::config(format!("{name}: ragged matrix rows")));
            }
            Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
        };
        if let Some(v) = &self.impact {
            model.impact = to_mat("impact", v)?;
        }
        if let Some(v) = &self.signal_load {
            model.signal_load = to_mat("signal_load", v)?;
        }
        if let Some(v) = &self.signal_ar {
            model.signal_ar = to_mat("signal_ar", v)?;
        }
        if let Some(v) = &self.cov_eps {
            model.cov_eps = to_mat("cov_eps", v)?;
        }
        if let Some(v) = &self.cov_eta {
            model.cov_eta = to_mat("cov_eta", v)?;
        }
        if let Some(v) = &self.initial_price {
            model.initial_price = DVector::from_vec(v.clone());
        }
        if let Some(v) = &self.target {
            model.target = DVector::from_vec(v.clone());
        }
        if let Some(v) = &self.initial_signal {
            model.initial_signal = DVector::from_vec(v.clone());
        }
        model.validate()?;
        Ok(model)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AdrlError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serialises")
    }
}

/// Structured view of the execution state vector `(P_{t-1}, X_t, R_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecState {
    pub price: Vec<f64>,
    pub signal: Vec<f64>,
    pub remaining: Vec<f64>,
}

impl ExecState {
    pub fn to_vec(&self) -> Vec<f64> {
        [self.price.as_slice(), &self.signal, &self.remaining].concat()
    }

    pub fn from_slice(model: &TradeExecModel, s: &[f64]) -> Result<Self> {
        let (n, m) = (model.n_assets, model.signal_dim);
        if s.len() != 2 * n + m {
            return Err(AdrlError::model("execution state has the wrong length"));
        }
        Ok(ExecState {
            price: s[..n].to_vec(),
            signal: s[n..n + m].to_vec(),
            remaining: s[n + m..].to_vec(),
        })
    }
}

fn check_dims(model: &TradeExecModel, state: &ExecState, action: &[f64], noise: &[f64]) -> Result<()> {
    let (n, m) = (model.n_assets, model.signal_dim);
    if state.price.len() != n
        || state.signal.len() != m
        || state.remaining.len() != n
        || action.len() != n
        || noise.len() != n + m
    {
        return Err(AdrlError::model("dimension mismatch in execution step"));
    }
    Ok(())
}

/// One transition of the execution model; `noise = (ε_t, η_{t+1})`.
pub fn exec_dynamics(
    model: &TradeExecModel,
    state: &ExecState,
    action: &[f64],
    noise: &[f64],
) -> Result<ExecState> {
    check_dims(model, state, action, noise)?;
    let n = model.n_assets;
    let a = DVector::from_column_slice(action);
    let x = DVector::from_column_slice(&state.signal);
    let impact = &model.impact * &a;
    let drift = &model.signal_load * &x;
    let next_signal = &model.signal_ar * &x;
    Ok(ExecState {
        price: (0..n).map(|i| state.price[i] + impact[i] + drift[i] + noise[i]).collect(),
        signal: (0..model.signal_dim).map(|j| next_signal[j] + noise[n + j]).collect(),
        remaining: (0..n).map(|i| state.remaining[i] - action[i]).collect(),
    })
}

/// Realised cost `P_tᵀ a_t`, with `P_t` the post-trade price of the same transition.
pub fn exec_stage_cost(
    model: &TradeExecModel,
    state: &ExecState,
    action: &[f64],
    noise: &[f64],
) -> Result<f64> {
    let next = exec_dynamics(model, state, action, noise)?;
    Ok(next.price.iter().zip(action).map(|(p, a)| p * a).sum())
}

/// Per-asset projection of a `T × n` schedule onto the feasible trading
/// schedules: scaled simplices under no-shorting, hyperplanes otherwise.
pub fn project_schedule(model: &TradeExecModel, proposal: &[f64]) -> Result<Vec<f64>> {
    let (t_len, n) = (model.horizon, model.n_assets);
    if proposal.len() != t_len * n {
        return Err(AdrlError::model("schedule has the wrong shape"));
    }
    if proposal.iter().any(|v| !v.is_finite()) {
        return Err(AdrlError::model("schedule has non-finite entries"));
    }
    let mut out = proposal.to_vec();
    let mut column = vec![0.0; t_len];
    for j in 0..n {
        for t in 0..t_len {
            column[t] = out[t * n + j];
        }
        if model.no_shorting {
            project_scaled_simplex(&mut column, model.target[j])?;
        } else {
            project_hyperplane(&mut column, model.target[j]);
        }
        for t in 0..t_len {
            out[t * n + j] = column[t];
        }
    }
    Ok(out)
}

/// The execution model as a minimisation [`ControlProblem`].
///
/// The stage cost is the conditional expectation of `P_tᵀ a_t` given the
/// pre-trade state, `(P_{t-1} + A a_t + B X_t)ᵀ a_t`. The dropped `ε_tᵀ a_t`
/// term has zero mean under any non-anticipative policy, so policy values are
/// unchanged, and the reward stays a function of `(s_t, a_t)` only.
#[derive(Clone, Debug)]
pub struct TradeExecution {
    model: TradeExecModel,
    noise: NoiseModel,
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TradeExecution {
    pub fn new(model: TradeExecModel) -> Result<Self> {
        model.validate()?;
        let noise = model.noise_model()?;
        let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
            (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect()
        };
        Ok(TradeExecution {
            n: model.n_assets,
            m: model.signal_dim,
            a: row_major(&model.impact),
            b: row_major(&model.signal_load),
            c: row_major(&model.signal_ar),
            noise,
            model,
        })
    }

    pub fn model(&self) -> &TradeExecModel {
        &self.model
    }

    fn last_stage(&self, t: usize) -> bool {
        t + 1 == self.model.horizon
    }

    /// `P + A a + B X` (expected post-trade price).
    fn expected_price(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let x = &s[n..n + m];
        for i in 0..n {
            let mut v = s[i];
            for k in 0..n {
                v += self.a[i * n + k] * a[k];
            }
            for j in 0..m {
                v += self.b[i * m + j] * x[j];
            }
            out[i] = v;
        }
    }
}

impl ControlProblem for TradeExecution {
    fn dims(&self) -> Dims {
        Dims {
            horizon: self.model.horizon,
            state: self.model.state_dim(),
            action: self.n,
            noise: self.model.noise_dim(),
        }
    }

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn initial_state(&self) -> Vec<f64> {
        self.model.initial_state().to_vec()
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn transition(&self, _t: usize, s: &[f64], a: &[f64], xi: &[f64], next: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        self.expected_price(s, a, &mut next[..n]);
        for i in 0..n {
            next[i] += xi[i];
        }
        let x = &s[n..n + m];
        for j in 0..m {
            let mut v = xi[n + j];
            for k in 0..m {
                v += self.c[j * m + k] * x[k];
            }
            next[n + j] = v;
        }
        for i in 0..n {
            next[n + m + i] = s[n + m + i] - a[i];
        }
    }

    fn transition_vjp(
        &self,
        _t: usize,
        _s: &[f64],
        _a: &[f64],
        _xi: &[f64],
        cot: &[f64],
        gs: &mut [f64],
        ga: &mut [f64],
    ) {
        let (n, m) = (self.n, self.m);
        let (cp, cx, cr) = (&cot[..n], &cot[n..n + m], &cot[n + m..]);
        for i in 0..n {
            gs[i] += cp[i];
            gs[n + m + i] += cr[i];
            ga[i] -= cr[i];
        }
        for i in 0..n {
            for k in 0..n {
                ga[k] += self.a[i * n + k] * cp[i];
            }
            for j in 0..m {
                gs[n + j] += self.b[i * m + j] * cp[i];
            }
        }
        for j in 0..m {
            for k in 0..m {
                gs[n + k] += self.c[j * m + k] * cx[j];
            }
        }
    }

    fn stage_reward(&self, _t: usize, s: &[f64], a: &[f64]) -> f64 {
        let mut p = vec![0.0; self.n];
        self.expected_price(s, a, &mut p);
        p.iter().zip(a).map(|(p, a)| p * a).sum()
    }

    fn stage_reward_grad(&self, _t: usize, s: &[f64], a: &[f64], scale: f64, gs: &mut [f64], ga: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let mut p = vec![0.0; n];
        self.expected_price(s, a, &mut p);
        for i in 0..n {
            gs[i] += scale * a[i];
            ga[i] += scale * p[i];
            for k in 0..n {
                ga[k] += scale * self.a[i * n + k] * a[i];
            }
            for j in 0..m {
                gs[n + j] += scale * self.b[i * m + j] * a[i];
            }
        }
    }

    fn terminal_reward(&self, _s: &[f64]) -> f64 {
        0.0
    }

    fn terminal_reward_grad(&self, _s: &[f64], _scale: f64, _g: &mut [f64]) {}

    fn constraints(&self, t: usize, s: &[f64], a: &[f64]) -> ConstraintResiduals {
        let rem = &s[self.n + self.m..];
        if self.last_stage(t) {
            return ConstraintResiduals {
                equalities: a.iter().zip(rem).map(|(a, r)| a - r).collect(),
                inequalities: vec![],
            };
        }
        if self.model.no_shorting {
            let mut ineq: Vec<f64> = a.to_vec();
            ineq.extend(a.iter().zip(rem).map(|(a, r)| r - a));
            ConstraintResiduals { equalities: vec![], inequalities: ineq }
        } else {
            ConstraintResiduals::default()
        }
    }

    fn project_action(&self, t: usize, s: &[f64], a: &mut [f64]) {
        let rem = &s[self.n + self.m..];
        if self.last_stage(t) {
            a.copy_from_slice(rem);
        } else if self.model.no_shorting {
            for (a, r) in a.iter_mut().zip(rem) {
                *a = a.clamp(0.0, r.max(0.0));
            }
        }
    }

    fn project_schedule(&self, schedule: &mut [f64]) {
        let projected = project_schedule(&self.model, schedule).expect("validated model");
        schedule.copy_from_slice(&projected);
    }

    fn schedule_violation(&self, schedule: &[f64]) -> f64 {
        let (t_len, n) = (self.model.horizon, self.n);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let total: f64 = (0..t_len).map(|t| schedule[t * n + j]).sum();
            worst = worst.max((total - self.model.target[j]).abs());
            if self.model.no_shorting {
                for t in 0..t_len {
                    worst = worst.max(-schedule[t * n + j]);
                }
            }
        }
        worst
    }

    fn nominal_schedule(&self) -> Vec<f64> {
        let t_len = self.model.horizon;
        (0..t_len)
            .flat_map(|_| self.model.target.iter().map(move |r| r / t_len as f64))
            .collect()
    }

    fn nominal_action(&self, t: usize, s: &[f64]) -> Vec<f64> {
        let left = (self.model.horizon - t) as f64;
        s[self.n + self.m..].iter().map(|r| r / left).collect()
    }

    fn random_schedule(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        use rand::Rng;
        let (t_len, n) = (self.model.horizon, self.n);
        let mut s = vec![0.0; t_len * n];
        for j in 0..n {
            let w: Vec<f64> = (0..t_len).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            for t in 0..t_len {
                s[t * n + j] = self.model.target[j] * w[t] / total;
            }
        }
        s
    }

    /// Minus the expected cost of selling the remaining inventory uniformly
    /// over the stages left at the initial price:
    /// `-(P_0ᵀ R + (k + 1) / (2k) · Rᵀ A R)` with `k = T - t`.
    fn deterministic_baseline(&self, t: usize, s: &[f64]) -> f64 {
        if t >= self.model.horizon {
            return 0.0;
        }
        let k = (self.model.horizon - t) as f64;
        let n = self.n;
        let r = &s[n + self.m..];
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += r[i] * self.a[i * n + j] * r[j];
            }
        }
        let lin: f64 = self.model.initial_price.iter().zip(r).map(|(p, r)| p * r).sum();
        -(lin + (k + 1.0) / (2.0 * k) * quad)
    }

    fn deterministic_baseline_grad(&self, t: usize, s: &[f64], scale: f64, grad: &mut [f64]) {
        if t >= self.model.horizon {
            return;
        }
        let k = (self.model.horizon - t) as f64;
        let c = (k + 1.0) / (2.0 * k);
        let n = self.n;
        let at = n + self.m;
        let r = &s[at..];
        for i in 0..n {
            let mut ar = 0.0;
            for j in 0..n {
                ar += (self.a[i * n + j] + self.a[j * n + i]) * r[j];
            }
            grad[at + i] -= scale * (self.model.initial_price[i] + c * ar);
        }
    }

    /// The remaining inventory.
    fn action_determined(&self) -> std::ops::Range<usize> {
        self.n + self.m..2 * self.n + self.m
    }
}
