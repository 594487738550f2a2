//! Complete- and observed-data log-likelihoods, posterior regime weights,
//! posterior-weighted sufficient statistics and the score.
//!
//! The complete-data log-likelihood of a path under regime `m` is
//!
//! ```text
//! l_m = sum_x B_x log phi_{x,m} + sum_x sum_{y != x} (N_xy log q_{xy,m} - q_{xy,m} T_x)
//! ```
//!
//! and the observed-data log-likelihood is `log sum_m exp(l_m)`. All mixture
//! arithmetic is done in the log domain.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::layout::ParamLayout;
use crate::model::ModelParams;
use crate::stats::PathStats;

pub(crate) fn check_sample(sample: &[PathStats], theta: &ModelParams) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(s) = sample.iter().find(|s| s.n_states() != theta.n_states()) {
        return Err(Error::ShapeMismatch(format!(
            "path has {} states, model has {}",
            s.n_states(),
            theta.n_states()
        )));
    }
    Ok(())
}

pub fn complete_loglik(stats: &PathStats, m: usize, theta: &ModelParams) -> f64 {
    let p = theta.n_states();
    debug_assert_eq!(stats.n_states(), p);
    let mut l = theta.phi(stats.initial_state(), m).ln();
    for x in 0..p {
        let tx = stats.t(x);
        for y in 0..p {
            if y == x {
                continue;
            }
            let q = theta.q(x, y, m);
            let n = stats.n(x, y);
            if n > 0.0 {
                l += n * q.ln();
            }
            l -= q * tx;
        }
    }
    l
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn regime_logliks(stats: &PathStats, theta: &ModelParams) -> Vec<f64> {
    (0..theta.n_regimes()).map(|m| complete_loglik(stats, m, theta)).collect()
}

/// Posterior probabilities of each regime given the path.
pub fn posterior_weights(stats: &PathStats, theta: &ModelParams) -> Vec<f64> {
    weights_from_logliks(&regime_logliks(stats, theta))
}

fn weights_from_logliks(ls: &[f64]) -> Vec<f64> {
    let max = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = ls.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

pub fn path_observed_loglik(stats: &PathStats, theta: &ModelParams) -> f64 {
    log_sum_exp(&regime_logliks(stats, theta))
}

/// `sum_k log f_o(X^k | theta)`.
pub fn observed_loglik(sample: &[PathStats], theta: &ModelParams) -> Result<f64> {
    check_sample(sample, theta)?;
    Ok(sample.iter().map(|s| path_observed_loglik(s, theta)).sum())
}

/// Posterior-weighted sufficient statistics over a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStats {
    p: usize,
    nm: usize,
    n_paths: usize,
    // p x M
    bhat: Vec<f64>,
    // M x p x p
    nhat: Vec<f64>,
    // p x M
    that: Vec<f64>,
    bbar: Vec<f64>,
}

impl WeightedStats {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn bhat(&self, x: usize, m: usize) -> f64 {
        self.bhat[x * self.nm + m]
    }

    pub fn nhat(&self, x: usize, y: usize, m: usize) -> f64 {
        self.nhat[(m * self.p + x) * self.p + y]
    }

    pub fn that(&self, x: usize, m: usize) -> f64 {
        self.that[x * self.nm + m]
    }

    pub fn bbar(&self, x: usize) -> f64 {
        self.bbar[x]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "x", "y", "m", "value"])?;
        let fmt = |v: f64| format!("{v:.16e}");
        for x in 0..self.p {
            w.write_record(["Bbar", &(x + 1).to_string(), "", "", &fmt(self.bbar(x))])?;
        }
        for m in 0..self.nm {
            for x in 0..self.p {
                let (xs, ms) = ((x + 1).to_string(), (m + 1).to_string());
                w.write_record(["Bhat", &xs, "", &ms, &fmt(self.bhat(x, m))])?;
                w.write_record(["That", &xs, "", &ms, &fmt(self.that(x, m))])?;
                for y in 0..self.p {
                    if y != x {
                        w.write_record(["Nhat", &xs, &(y + 1).to_string(), &ms, &fmt(self.nhat(x, y, m))])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn weighted_stats(sample: &[PathStats], theta: &ModelParams) -> Result<WeightedStats> {
    check_sample(sample, theta)?;
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let mut ws = WeightedStats {
        p,
        nm,
        n_paths: sample.len(),
        bhat: vec![0.0; p * nm],
        nhat: vec![0.0; nm * p * p],
        that: vec![0.0; p * nm],
        bbar: vec![0.0; p],
    };
    for s in sample {
        let w = posterior_weights(s, theta);
        let x0 = s.initial_state();
        ws.bbar[x0] += 1.0;
        for (m, &wm) in w.iter().enumerate() {
            ws.bhat[x0 * nm + m] += wm;
            for x in 0..p {
                ws.that[x * nm + m] += wm * s.t(x);
                for y in 0..p {
                    let n = s.n(x, y);
                    if n > 0.0 {
                        ws.nhat[(m * p + x) * p + y] += wm * n;
                    }
                }
            }
        }
    }
    Ok(ws)
}

/// Score `S_n(theta)`: the gradient of `observed_loglik / n` in free-parameter
/// order, evaluated in closed form from the weighted statistics.
pub fn score(sample: &[PathStats], theta: &ModelParams) -> Result<DVector<f64>> {
    let ws = weighted_stats(sample, theta)?;
    Ok(score_from_weighted(&ws, theta))
}

pub fn score_from_weighted(ws: &WeightedStats, theta: &ModelParams) -> DVector<f64> {
    let layout = ParamLayout::for_model(theta);
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let n = ws.n_paths() as f64;
    let mut s = DVector::zeros(layout.dim());
    for x in 0..p {
        let last = ws.bhat(x, nm - 1) / theta.phi(x, nm - 1);
        for m in 0..nm - 1 {
            s[layout.phi_index(x, m)] = (ws.bhat(x, m) / theta.phi(x, m) - last) / n;
        }
    }
    for m in 0..nm {
        for x in 0..p {
            for y in 0..p {
                if x != y {
                    s[layout.rate_index(x, y, m)] =
                        (ws.nhat(x, y, m) / theta.q(x, y, m) - ws.that(x, m)) / n;
                }
            }
        }
    }
    s
}

/// Per-path observed-data score `d log f_o(X^k) / d theta`, computed as the
/// posterior expectation of the complete-data score.
pub fn path_score(stats: &PathStats, theta: &ModelParams) -> DVector<f64> {
    let w = posterior_weights(stats, theta);
    path_score_with_weights(stats, theta, &w)
}

pub(crate) fn path_score_with_weights(
    stats: &PathStats,
    theta: &ModelParams,
    w: &[f64],
) -> DVector<f64> {
    let layout = ParamLayout::for_model(theta);
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let mut s = DVector::zeros(layout.dim());
    let x0 = stats.initial_state();
    for m in 0..nm - 1 {
        s[layout.phi_index(x0, m)] = w[m] / theta.phi(x0, m) - w[nm - 1] / theta.phi(x0, nm - 1);
    }
    for m in 0..nm {
        for x in 0..p {
            for y in 0..p {
                if x != y {
                    let q = theta.q(x, y, m);
                    s[layout.rate_index(x, y, m)] = w[m] * (stats.n(x, y) - q * stats.t(x)) / q;
                }
            }
        }
    }
    s
}

/// Gradient of the complete-data log-likelihood `l_m` of one path with
/// respect to the free parameters.
pub fn complete_score(stats: &PathStats, m: usize, theta: &ModelParams) -> DVector<f64> {
    let layout = ParamLayout::for_model(theta);
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let mut g = DVector::zeros(layout.dim());
    for x in 0..p {
        let b = stats.b(x);
        for j in 0..nm - 1 {
            let mut v = 0.0;
            if m == j {
                v += b / theta.phi(x, j);
            }
            if m == nm - 1 {
                v -= b / theta.phi(x, nm - 1);
            }
            g[layout.phi_index(x, j)] = v;
        }
    }
    for x in 0..p {
        for y in 0..p {
            if x != y {
                g[layout.rate_index(x, y, m)] = stats.n(x, y) / theta.q(x, y, m) - stats.t(x);
            }
        }
    }
    g
}

/// Hessian of `l_m` for one path with respect to the free parameters.
pub fn complete_hessian(stats: &PathStats, m: usize, theta: &ModelParams) -> DMatrix<f64> {
    let layout = ParamLayout::for_model(theta);
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let d = layout.dim();
    let mut h = DMatrix::zeros(d, d);
    for x in 0..p {
        let b = stats.b(x);
        if b == 0.0 {
            continue;
        }
        for j in 0..nm - 1 {
            for l in 0..nm - 1 {
                let mut v = 0.0;
                if m == j && j == l {
                    v -= b / theta.phi(x, j).powi(2);
                }
                if m == nm - 1 {
                    v -= b / theta.phi(x, nm - 1).powi(2);
                }
                h[(layout.phi_index(x, j), layout.phi_index(x, l))] = v;
            }
        }
    }
    for x in 0..p {
        for y in 0..p {
            if x != y {
                let i = layout.rate_index(x, y, m);
                h[(i, i)] = -stats.n(x, y) / theta.q(x, y, m).powi(2);
            }
        }
    }
    h
}
