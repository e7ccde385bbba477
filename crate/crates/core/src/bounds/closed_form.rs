use nalgebra::{DMatrix, DVector};

use crate::control::Policy;
use crate::envs::TradeExecModel;
use crate::error::{AdrlError, Result};

/// Optimal linear feedback `a_t = K_t s + k_t` of the execution problem
/// without the no-shorting constraint, and its expected cost.
#[derive(Clone, Debug)]
pub struct ExecClosedForm {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    /// Expected total cost from the model's initial state.
    pub cost: f64,
}

/// Quadratic function `sᵀ Q s + qᵀ s + c`.
struct Quadratic {
    q2: DMatrix<f64>,
    q1: DVector<f64>,
    c: f64,
}

/// Backward induction on quadratic value functions of `s = (P, X, R)`.
///
/// The last stage buys the remainder, so `V_{T-1}(s) = (P + A R + B X)ᵀ R`;
/// earlier stages minimise `(P + A a + B X)ᵀ a + E V_{t+1}(F s + G a + L w)`
/// over unconstrained `a`.
pub fn exec_closed_form(model: &TradeExecModel) -> Result<ExecClosedForm> {
    if model.no_shorting {
        return Err(AdrlError::Unsupported(
            "no closed form exists with the no-shorting constraint".into(),
        ));
    }
    model.validate()?;
    let (n, m) = (model.n_assets, model.signal_dim);
    let ds = 2 * n + m;
    let (ip, ix, ir) = (0, n, n + m);
    let a_mat = &model.impact;
    let b_mat = &model.signal_load;

    // stage cost as a quadratic form in z = (s, a)
    let dz = ds + n;
    let ia = ds;
    let mut cost = DMatrix::zeros(dz, dz);
    for i in 0..n {
        for j in 0..n {
            cost[(ia + i, ia + j)] = a_mat[(i, j)];
        }
        cost[(ia + i, ip + i)] += 0.5;
        cost[(ip + i, ia + i)] += 0.5;
        for k in 0..m {
            cost[(ia + i, ix + k)] += 0.5 * b_mat[(i, k)];
            cost[(ix + k, ia + i)] += 0.5 * b_mat[(i, k)];
        }
    }

    // s' = M z + L w, with w = (ε, η)
    let mut dyn_m = DMatrix::zeros(ds, dz);
    for i in 0..n {
        dyn_m[(ip + i, ip + i)] = 1.0;
        dyn_m[(ir + i, ir + i)] = 1.0;
        dyn_m[(ir + i, ia + i)] = -1.0;
        for j in 0..n {
            dyn_m[(ip + i, ia + j)] = a_mat[(i, j)];
        }
        for k in 0..m {
            dyn_m[(ip + i, ix + k)] = b_mat[(i, k)];
        }
    }
    for k in 0..m {
        for l in 0..m {
            dyn_m[(ix + k, ix + l)] = model.signal_ar[(k, l)];
        }
    }
    let mut noise_cov = DMatrix::zeros(ds, ds);
    noise_cov.view_mut((ip, ip), (n, n)).copy_from(&model.cov_eps);
    noise_cov.view_mut((ix, ix), (m, m)).copy_from(&model.cov_eta);

    let horizon = model.horizon;
    let mut gains = vec![DMatrix::zeros(n, ds); horizon];
    let mut offsets = vec![DVector::zeros(n); horizon];

    // last stage: a = R
    let mut last_gain = DMatrix::zeros(n, ds);
    for i in 0..n {
        last_gain[(i, ir + i)] = 1.0;
    }
    let mut embed = DMatrix::zeros(dz, ds);
    embed.view_mut((0, 0), (ds, ds)).fill_with_identity();
    embed.view_mut((ia, 0), (n, ds)).copy_from(&last_gain);
    let mut value = Quadratic { q2: embed.transpose() * &cost * &embed, q1: DVector::zeros(ds), c: 0.0 };
    gains[horizon - 1] = last_gain;

    for t in (0..horizon.saturating_sub(1)).rev() {
        // J(z) = zᵀ H z + hᵀ z + k
        let h2 = &cost + dyn_m.transpose() * &value.q2 * &dyn_m;
        let h1 = dyn_m.transpose() * &value.q1;
        let k = value.c + (&value.q2 * &noise_cov).trace();
        let haa = h2.view((ia, ia), (n, n)).into_owned();
        let has = h2.view((ia, 0), (n, ds)).into_owned();
        let hss = h2.view((0, 0), (ds, ds)).into_owned();
        let ha = h1.rows(ia, n).into_owned();
        let hs = h1.rows(0, ds).into_owned();
        let chol = haa
            .clone()
            .cholesky()
            .ok_or_else(|| AdrlError::numerical("stage Hessian in the action is not positive definite"))?;
        let gain = -chol.solve(&has);
        let offset = -chol.solve(&ha) * 0.5;
        let q2 = &hss + has.transpose() * &gain + gain.transpose() * &has + gain.transpose() * &haa * &gain;
        let q1 = &hs + 2.0 * has.transpose() * &offset + 2.0 * gain.transpose() * &haa * &offset + gain.transpose() * &ha;
        let c = (offset.transpose() * &haa * &offset)[(0, 0)] + ha.dot(&offset) + k;
        value = Quadratic { q2: (&q2 + q2.transpose()) * 0.5, q1, c };
        gains[t] = gain;
        offsets[t] = offset;
    }
    let s0 = DVector::from_vec(model.initial_state().to_vec());
    let cost = (s0.transpose() * &value.q2 * &s0)[(0, 0)] + value.q1.dot(&s0) + value.c;
    Ok(ExecClosedForm { gains, offsets, cost })
}

/// Expected cost of the uniform schedule for one asset with no signal:
/// `R̄ P_0 + θ R̄² (T + 1) / (2T)`.
pub fn uniform_schedule_cost(theta: f64, target: f64, price: f64, horizon: usize) -> f64 {
    let t = horizon as f64;
    target * price + theta * target * target * (t + 1.0) / (2.0 * t)
}

impl Policy for ExecClosedForm {
    fn act(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        let s = DVector::from_column_slice(state);
        Ok((&self.gains[t] * s + &self.offsets[t]).iter().copied().collect())
    }
}
