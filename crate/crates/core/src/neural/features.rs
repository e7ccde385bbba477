use serde::{Deserialize, Serialize};

use crate::envs::TradeExecModel;
use crate::error::{AdrlError, Result};

/// Quadratic features of an execution state:
/// `(1, P, X, R, vec(X Xᵀ), vec(R Rᵀ), vec(P Rᵀ), vec(X Rᵀ))`, outer
/// products flattened row-major.
pub fn quadratic_features(p: &[f64], x: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    if p.len() != r.len() || p.is_empty() || x.is_empty() {
        return Err(AdrlError::parameter(format!(
            "quadratic features need |P| = |R| > 0 and |X| > 0, got {}, {}, {}",
            p.len(),
            x.len(),
            r.len()
        )));
    }
    let mut out = Vec::with_capacity(quadratic_feature_dim(p.len(), x.len()));
    push_quadratic(p, x, r, &mut out);
    Ok(out)
}

/// `1 + n + m + n + m² + n² + n² + n·m`.
pub fn quadratic_feature_dim(n: usize, m: usize) -> usize {
    1 + n + m + n + m * m + n * n + n * n + n * m
}

fn push_quadratic(p: &[f64], x: &[f64], r: &[f64], out: &mut Vec<f64>) {
    out.push(1.0);
    out.extend_from_slice(p);
    out.extend_from_slice(x);
    out.extend_from_slice(r);
    for a in x {
        out.extend(x.iter().map(|b| a * b));
    }
    for a in r {
        out.extend(r.iter().map(|b| a * b));
    }
    for a in p {
        out.extend(r.iter().map(|b| a * b));
    }
    for a in x {
        out.extend(r.iter().map(|b| a * b));
    }
}

/// Map from raw state to network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMap {
    /// The state itself.
    Identity { dim: usize },
    /// Quadratic features of the standardised execution state
    /// `((P - shift)/price_scale, X/signal_scale, R/remaining_scale)`.
    Quadratic {
        n_assets: usize,
        signal_dim: usize,
        price_shift: Vec<f64>,
        price_scale: f64,
        signal_scale: f64,
        remaining_scale: f64,
    },
}

impl FeatureMap {
    /// Scales chosen from the model: prices are centred on `P_0` and scaled
    /// by the typical drift over the horizon.
    pub fn for_exec(model: &TradeExecModel) -> Self {
        let t = model.horizon as f64;
        let push = &model.impact * &model.target;
        let price_scale = (0..model.n_assets)
            .map(|i| (t * model.cov_eps[(i, i)]).sqrt() + push[i].abs())
            .fold(0.0_f64, f64::max);
        let signal_scale = model.stationary_signal_std().into_iter().fold(0.0_f64, f64::max);
        let remaining_scale = model.target.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let positive = |v: f64| if v > 1e-12 { v } else { 1.0 };
        FeatureMap::Quadratic {
            n_assets: model.n_assets,
            signal_dim: model.signal_dim,
            price_shift: model.initial_price.iter().copied().collect(),
            price_scale: positive(price_scale),
            signal_scale: positive(signal_scale),
            remaining_scale: positive(remaining_scale),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Quadratic { n_assets, signal_dim, .. } => 2 * n_assets + signal_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Quadratic { n_assets, signal_dim, .. } => quadratic_feature_dim(*n_assets, *signal_dim),
        }
    }

    /// Writes the features of `state` into `out` (cleared first).
    pub fn apply(&self, state: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            FeatureMap::Identity { .. } => out.extend_from_slice(state),
            FeatureMap::Quadratic { n_assets: n, signal_dim: m, price_shift, price_scale, signal_scale, remaining_scale } => {
                let (n, m) = (*n, *m);
                let mut buf = [0.0; 64];
                let z: &mut [f64] = if 2 * n + m <= 64 { &mut buf[..2 * n + m] } else { &mut vec![0.0; 2 * n + m] };
                for i in 0..n {
                    z[i] = (state[i] - price_shift[i]) / price_scale;
                    z[n + m + i] = state[n + m + i] / remaining_scale;
                }
                for j in 0..m {
                    z[n + j] = state[n + j] / signal_scale;
                }
                push_quadratic(&z[..n], &z[n..n + m], &z[n + m..], out);
            }
        }
    }

    /// Accumulates `Jᵀ g` into `grad_state`, with `J` the feature Jacobian at `state`.
    pub fn vjp(&self, state: &[f64], g: &[f64], grad_state: &mut [f64]) {
        match self {
            FeatureMap::Identity { .. } => {
                for (gs, gv) in grad_state.iter_mut().zip(g) {
                    *gs += gv;
                }
            }
            FeatureMap::Quadratic { n_assets: n, signal_dim: m, price_shift, price_scale, signal_scale, remaining_scale } => {
                let (n, m) = (*n, *m);
                let p: Vec<f64> = (0..n).map(|i| (state[i] - price_shift[i]) / price_scale).collect();
                let x: Vec<f64> = (0..m).map(|j| state[n + j] / signal_scale).collect();
                let r: Vec<f64> = (0..n).map(|i| state[n + m + i] / remaining_scale).collect();
                let mut gp = g[1..1 + n].to_vec();
                let mut gx = g[1 + n..1 + n + m].to_vec();
                let mut gr = g[1 + n + m..1 + 2 * n + m].to_vec();
                let mut at = 1 + 2 * n + m;
                for i in 0..m {
                    for j in 0..m {
                        let w = g[at + i * m + j];
                        gx[i] += w * x[j];
                        gx[j] += w * x[i];
                    }
                }
                at += m * m;
                for i in 0..n {
                    for j in 0..n {
                        let w = g[at + i * n + j];
                        gr[i] += w * r[j];
                        gr[j] += w * r[i];
                    }
                }
                at += n * n;
                for i in 0..n {
                    for j in 0..n {
                        let w = g[at + i * n + j];
                        gp[i] += w * r[j];
                        gr[j] += w * p[i];
                    }
                }
                at += n * n;
                for i in 0..m {
                    for j in 0..n {
                        let w = g[at + i * n + j];
                        gx[i] += w * r[j];
                        gr[j] += w * x[i];
                    }
                }
                for i in 0..n {
                    grad_state[i] += gp[i] / price_scale;
                    grad_state[n + m + i] += gr[i] / remaining_scale;
                }
                for j in 0..m {
                    grad_state[n + j] += gx[j] / signal_scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_single_asset() {
        assert_eq!(
            quadratic_features(&[2.0], &[3.0], &[4.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 9.0, 16.0, 8.0, 12.0]
        );
    }

    #[test]
    fn ten_assets_three_signals() {
        let f = quadratic_features(&[0.0; 10], &[0.0; 3], &[0.0; 10]).unwrap();
        assert_eq!(f.len(), 263);
        assert_eq!(f[0], 1.0);
        assert!(f[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_formula() {
        for n in 1..6 {
            for m in 1..5 {
                let f = quadratic_features(&vec![1.0; n], &vec![1.0; m], &vec![1.0; n]).unwrap();
                assert_eq!(f.len(), quadratic_feature_dim(n, m));
            }
        }
        assert!(quadratic_features(&[1.0], &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn quadratic_vjp_matches_finite_differences() {
        let fm = FeatureMap::Quadratic {
            n_assets: 2,
            signal_dim: 1,
            price_shift: vec![50.0, 49.0],
            price_scale: 0.2,
            signal_scale: 0.1,
            remaining_scale: 10.0,
        };
        let s = [50.1, 48.9, 0.05, 3.0, 7.0];
        let g: Vec<f64> = (0..fm.output_dim()).map(|i| ((i * 7) as f64).sin()).collect();
        let mut gs = vec![0.0; 5];
        fm.vjp(&s, &g, &mut gs);
        let dot = |s: &[f64]| {
            let mut f = Vec::new();
            fm.apply(s, &mut f);
            f.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
        };
        for k in 0..5 {
            let h = 1e-6;
            let mut up = s.to_vec();
            let mut dn = s.to_vec();
            up[k] += h;
            dn[k] -= h;
            let fd = (dot(&up) - dot(&dn)) / (2.0 * h);
            assert!((fd - gs[k]).abs() < 1e-5 * gs[k].abs().max(1.0), "coord {k}: {fd} vs {}", gs[k]);
        }
    }
}
