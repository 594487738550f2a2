//! Fitting loops (EM, EM-Gradient, Fisher scoring) and the repeated-sampling
//! M-estimator.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::{
    jx_blocks, jy, observed_information_inverse, sandwich, InfoMatrices, JxBlocks,
};
use crate::layout::{pack, unpack_values, FreeParamVector, ParamLayout};
use crate::likelihood::{check_sample, observed_loglik, score, score_from_weighted, weighted_stats};
use crate::model::{ModelParams, Violation};
use crate::simulator::{derive_seed, simulate_stats, SimConfig};
use crate::stats::{PathStats, PooledStats};

/// Floor applied to posterior-weighted occupation times inside the EM update.
pub const OCCUPATION_FLOOR: f64 = 1e-12;
/// Consecutive floored EM iterations tolerated before giving up.
pub const MAX_FLOORED_ITERS: usize = 5;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "em-gradient")]
    EmGradient,
    #[serde(rename = "fisher-scoring")]
    FisherScoring,
}

impl Method {
    pub fn default_max_iter(self) -> usize {
        match self {
            Method::Em => 2000,
            Method::EmGradient | Method::FisherScoring => 200,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Em => "em",
            Method::EmGradient => "em-gradient",
            Method::FisherScoring => "fisher-scoring",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "em" => Ok(Method::Em),
            "em-gradient" | "emg" => Ok(Method::EmGradient),
            "fisher-scoring" | "fisher" | "fs" => Ok(Method::FisherScoring),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
}

impl FitConfig {
    pub fn new(method: Method) -> Self {
        Self { method, tol: 1e-8, max_iter: method.default_max_iter() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ModelParams,
    pub iterations: usize,
    /// Observed-data log-likelihood at the start and after every step.
    pub loglik_trace: Vec<f64>,
    /// Sup-norm of the parameter change of every step.
    pub error_trace: Vec<f64>,
    pub converged: bool,
    pub method: Method,
}

impl FitResult {
    /// True if no step lowered the log-likelihood by more than `rel_slack`
    /// relative to its magnitude.
    pub fn is_monotone(&self, rel_slack: f64) -> bool {
        self.loglik_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - rel_slack * w[0].abs().max(1.0))
    }
}

/// Starting point built from the data: pooled Markov rate estimates
/// `sum N_xy / sum T_x`, spread across regimes by the multiplicative factors
/// `1 + 0.5 (m - (M+1)/2) / M` (1-based `m`), uniform phi, and
/// `alpha = Bbar / n`.
pub fn initial_guess(sample: &[PathStats], n_regimes: usize) -> Result<ModelParams> {
    if n_regimes == 0 {
        return Err(Error::Config("need at least one regime".into()));
    }
    let pooled = PooledStats::from_sample(sample)?;
    let p = pooled.t.len();
    let nm = n_regimes;
    let n = sample.len() as f64;
    for x in 0..p {
        if pooled.t[x] == 0.0 {
            return Err(Error::InsufficientData(format!(
                "state {} is never visited; use a longer horizon or more paths",
                x + 1
            )));
        }
        if nm > 1 && pooled.b[x] == 0.0 {
            return Err(Error::InsufficientData(format!(
                "no path starts in state {}; its regime probabilities are not identifiable",
                x + 1
            )));
        }
        for y in 0..p {
            if x != y && pooled.n[x * p + y] == 0.0 {
                return Err(Error::InsufficientData(format!(
                    "transition {} -> {} is never observed; use a longer horizon or more paths",
                    x + 1,
                    y + 1
                )));
            }
        }
    }
    let alpha = pooled.b.iter().map(|b| b / n).collect();
    let mut phi = vec![1.0 / nm as f64; p * nm];
    for x in 0..p {
        let head: f64 = phi[x * nm..x * nm + nm - 1].iter().sum();
        phi[x * nm + nm - 1] = 1.0 - head;
    }
    let mut q = vec![0.0; nm * p * p];
    for m in 0..nm {
        let factor = 1.0 + 0.5 * ((m + 1) as f64 - (nm + 1) as f64 / 2.0) / nm as f64;
        for x in 0..p {
            for y in 0..p {
                if x != y {
                    q[(m * p + x) * p + y] = pooled.n[x * p + y] / pooled.t[x] * factor;
                }
            }
        }
    }
    ModelParams::from_parts(alpha, phi, q, p, nm)
}

/// Result of one EM update. `floored` lists the `(state, regime)` pairs
/// whose weighted occupation time had to be floored.
#[derive(Debug, Clone)]
pub struct EmUpdate {
    pub theta: ModelParams,
    pub floored: Vec<(usize, usize)>,
}

/// One EM iteration: `phi_{x,m} = Bhat_{x,m} / Bbar_x`,
/// `q_{xy,m} = Nhat_{xy,m} / That_{x,m}`, `alpha = Bbar / n`.
pub fn em_step(sample: &[PathStats], theta: &ModelParams) -> Result<EmUpdate> {
    let ws = weighted_stats(sample, theta)?;
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let n = sample.len() as f64;
    let mut phi = vec![0.0; p * nm];
    let mut alpha = vec![0.0; p];
    for x in 0..p {
        let bbar = ws.bbar(x);
        alpha[x] = bbar / n;
        if bbar == 0.0 {
            if nm == 1 {
                phi[x] = 1.0;
                continue;
            }
            return Err(Error::InsufficientData(format!("no path starts in state {}", x + 1)));
        }
        let mut head = 0.0;
        for m in 0..nm - 1 {
            let v = ws.bhat(x, m) / bbar;
            phi[x * nm + m] = v;
            head += v;
        }
        phi[x * nm + nm - 1] = 1.0 - head;
    }
    let mut floored = Vec::new();
    let mut q = vec![0.0; nm * p * p];
    for m in 0..nm {
        for x in 0..p {
            let mut t = ws.that(x, m);
            if t < OCCUPATION_FLOOR {
                t = OCCUPATION_FLOOR;
                floored.push((x, m));
            }
            for y in 0..p {
                if x != y {
                    q[(m * p + x) * p + y] = ws.nhat(x, y, m) / t;
                }
            }
        }
    }
    let theta = ModelParams::from_parts(alpha, phi, q, p, nm).map_err(|e| match e {
        Error::InvalidParams(v) => Error::DegenerateRegime(describe_degeneracy(&v)),
        other => other,
    })?;
    Ok(EmUpdate { theta, floored })
}

fn describe_degeneracy(v: &[Violation]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("EM update collapsed a regime ({})", parts.join("; "))
}

/// Moves along `direction` from `theta`, halving the step until the result
/// is a valid parameter set.
fn safeguarded_update(theta: &ModelParams, direction: &DVector<f64>) -> Result<ModelParams> {
    let layout = ParamLayout::for_model(theta);
    let base = pack(theta).into_values();
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let cand: Vec<f64> = base.iter().zip(direction.iter()).map(|(b, d)| b + t * d).collect();
        if let Ok(next) = unpack_values(layout, &cand, theta.alpha()) {
            return Ok(next);
        }
        t *= 0.5;
    }
    Err(Error::StepHalving(MAX_HALVINGS))
}

/// `theta + J_x(theta)^{-1} S_n(theta)` with the closed-form inverse.
pub fn em_gradient_step(sample: &[PathStats], theta: &ModelParams) -> Result<ModelParams> {
    let ws = weighted_stats(sample, theta)?;
    let s = score_from_weighted(&ws, theta);
    let inv = JxBlocks::from_weighted(&ws, theta).inverse()?;
    safeguarded_update(theta, &(inv * s))
}

/// `theta + J_y(theta)^{-1} S_n(theta)`.
pub fn fisher_scoring_step(sample: &[PathStats], theta: &ModelParams) -> Result<ModelParams> {
    let info = InfoMatrices::compute(sample, theta)?;
    let s = score(sample, theta)?;
    let inv = observed_information_inverse(&info)?;
    safeguarded_update(theta, &(inv * s))
}

fn sup_distance(a: &ModelParams, b: &ModelParams) -> f64 {
    pack(a)
        .values()
        .iter()
        .zip(pack(b).values())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Iterates the chosen update until the sup-norm parameter change drops
/// below `tol` or `max_iter` steps have run. Exhausting `max_iter` is not an
/// error; the result reports `converged = false`.
pub fn fit(sample: &[PathStats], theta0: &ModelParams, config: &FitConfig) -> Result<FitResult> {
    check_sample(sample, theta0)?;
    let mut theta = theta0.clone();
    let mut loglik_trace = vec![observed_loglik(sample, &theta)?];
    let mut error_trace = Vec::new();
    let mut converged = false;
    let mut floored_run = 0;
    for _ in 0..config.max_iter {
        let next = match config.method {
            Method::Em => {
                let upd = em_step(sample, &theta)?;
                if upd.floored.is_empty() {
                    floored_run = 0;
                } else {
                    floored_run += 1;
                    if floored_run >= MAX_FLOORED_ITERS {
                        let (x, m) = upd.floored[0];
                        return Err(Error::DegenerateRegime(format!(
                            "weighted occupation time of state {} under regime {} stayed below {OCCUPATION_FLOOR:e} for {MAX_FLOORED_ITERS} iterations; regime labels are not identifiable",
                            x + 1,
                            m + 1
                        )));
                    }
                }
                upd.theta
            }
            Method::EmGradient => em_gradient_step(sample, &theta)?,
            Method::FisherScoring => fisher_scoring_step(sample, &theta)?,
        };
        let err = sup_distance(&next, &theta);
        theta = next;
        error_trace.push(err);
        loglik_trace.push(observed_loglik(sample, &theta)?);
        if err < config.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        theta_hat: theta,
        iterations: error_trace.len(),
        loglik_trace,
        error_trace,
        converged,
        method: config.method,
    })
}

/// Fits from [`initial_guess`].
pub fn fit_from_data(sample: &[PathStats], n_regimes: usize, config: &FitConfig) -> Result<FitResult> {
    let theta0 = initial_guess(sample, n_regimes)?;
    fit(sample, &theta0, config)
}

/// Regime permutation of `theta` closest to `reference` in squared distance
/// over all phi entries and rates. Exhaustive, so intended for small `M`.
pub fn align_regimes(theta: &ModelParams, reference: &ModelParams) -> ModelParams {
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let cost = |m: usize, r: usize| -> f64 {
        let mut c = 0.0;
        for x in 0..p {
            c += (theta.phi(x, m) - reference.phi(x, r)).powi(2);
            for y in 0..p {
                if x != y {
                    c += (theta.q(x, y, m) - reference.q(x, y, r)).powi(2);
                }
            }
        }
        c
    };
    let best = (0..nm)
        .permutations(nm)
        .min_by(|a, b| {
            let ca: f64 = a.iter().enumerate().map(|(r, &m)| cost(m, r)).sum();
            let cb: f64 = b.iter().enumerate().map(|(r, &m)| cost(m, r)).sum();
            ca.total_cmp(&cb)
        })
        .expect("at least one permutation");
    theta.permute_regimes(&best)
}

/// Simulates `k` independent samples; replicate `i` uses the seed
/// `derive_seed(config.seed, i)`.
pub fn simulate_replicates(
    theta: &ModelParams,
    k: usize,
    config: &SimConfig,
) -> Result<Vec<Vec<PathStats>>> {
    (0..k)
        .map(|i| {
            let cfg = SimConfig { seed: derive_seed(config.seed, i as u64), ..*config };
            simulate_stats(theta, &cfg)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MEstimatorResult {
    /// Paths per replicate.
    pub n: usize,
    /// Per-replicate fits, regimes aligned.
    pub fits: Vec<FitResult>,
    pub mle_estimates: Vec<FreeParamVector>,
    /// Averages of `J_xk`, `J_yk` evaluated at each replicate's own MLE.
    pub mle_jx_bar: DMatrix<f64>,
    pub mle_jx_bar_inverse: DMatrix<f64>,
    pub mle_jy_bar: DMatrix<f64>,
    /// Average of the replicate MLEs.
    pub theta_bar: FreeParamVector,
    pub theta_bar_params: ModelParams,
    /// One-step estimates `theta_bar + J_xk^{-1}(theta_bar) S_nk(theta_bar)`.
    pub theta0_estimates: Vec<FreeParamVector>,
    pub scores_at_theta_bar: Vec<DVector<f64>>,
    pub jxk_at_theta_bar: Vec<DMatrix<f64>>,
    /// Averages of `J_xk`, `J_yk` at `theta_bar`.
    pub jx_bar: DMatrix<f64>,
    pub jx_bar_inverse: DMatrix<f64>,
    pub jy_bar: DMatrix<f64>,
    /// `Jx_bar^{-1} Jy_bar Jx_bar^{-1}` at `theta_bar`.
    pub sigma_n: DMatrix<f64>,
}

impl MEstimatorResult {
    pub fn mle_sigma_n(&self) -> DMatrix<f64> {
        sandwich(&self.mle_jx_bar_inverse, &self.mle_jy_bar)
    }

    pub fn layout(&self) -> ParamLayout {
        self.theta_bar.layout()
    }
}

fn mean_matrix(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(ms[0].nrows(), ms[0].ncols());
    for m in ms {
        acc += m;
    }
    acc / ms.len() as f64
}

fn tag(replicate: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Replicate { replicate, source: Box::new(e) }
}

/// Fits every sample, aligns regime labels (to `reference` when given,
/// otherwise to the first replicate), averages the MLEs and forms the
/// one-step M-estimates and averaged information matrices.
pub fn m_estimator_pipeline(
    samples: &[Vec<PathStats>],
    n_regimes: usize,
    config: &FitConfig,
    reference: Option<&ModelParams>,
) -> Result<MEstimatorResult> {
    if samples.is_empty() {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let n = samples[0].len();
    if let Some(k) = samples.iter().position(|s| s.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "replicate {k} has {} paths, replicate 0 has {n}",
            samples[k].len()
        )));
    }

    let mut fits: Vec<FitResult> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| fit_from_data(s, n_regimes, config).map_err(tag(k)))
        .collect::<Result<_>>()?;
    let anchor = reference.cloned().unwrap_or_else(|| fits[0].theta_hat.clone());
    for f in &mut fits {
        f.theta_hat = align_regimes(&f.theta_hat, &anchor);
    }

    let mle_info: Vec<(JxBlocks, DMatrix<f64>)> = samples
        .par_iter()
        .zip(&fits)
        .enumerate()
        .map(|(k, (s, f))| -> Result<_> {
            let blocks = jx_blocks(s, &f.theta_hat).map_err(tag(k))?;
            let j = jy(s, &f.theta_hat).map_err(tag(k))?;
            Ok((blocks, j))
        })
        .collect::<Result<_>>()?;
    let mle_blocks: Vec<JxBlocks> = mle_info.iter().map(|(b, _)| b.clone()).collect();
    let mle_jx_blocks = JxBlocks::mean(&mle_blocks)?;
    let mle_jy_bar = mean_matrix(&mle_info.iter().map(|(_, j)| j.clone()).collect::<Vec<_>>());

    let mle_estimates: Vec<FreeParamVector> = fits.iter().map(|f| pack(&f.theta_hat)).collect();
    let layout = mle_estimates[0].layout();
    let k = samples.len() as f64;
    let mut mean = vec![0.0; layout.dim()];
    for v in &mle_estimates {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let p = layout.n_states();
    let mut alpha = vec![0.0; p];
    for f in &fits {
        for (a, v) in alpha.iter_mut().zip(f.theta_hat.alpha()) {
            *a += v / k;
        }
    }
    let theta_bar_params = unpack_values(layout, &mean, &alpha)?;
    let theta_bar = pack(&theta_bar_params);

    let at_bar: Vec<(JxBlocks, DMatrix<f64>, DVector<f64>)> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| -> Result<_> {
            let ws = weighted_stats(s, &theta_bar_params).map_err(tag(k))?;
            let blocks = JxBlocks::from_weighted(&ws, &theta_bar_params);
            let sc = score_from_weighted(&ws, &theta_bar_params);
            let j = jy(s, &theta_bar_params).map_err(tag(k))?;
            Ok((blocks, j, sc))
        })
        .collect::<Result<_>>()?;

    let mut theta0_estimates = Vec::with_capacity(samples.len());
    let mut jxk_at_theta_bar = Vec::with_capacity(samples.len());
    for (i, (blocks, _, sc)) in at_bar.iter().enumerate() {
        let step = blocks.inverse().map_err(tag(i))? * sc;
        let vals: Vec<f64> = theta_bar.values().iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        theta0_estimates.push(FreeParamVector::new(layout, vals)?);
        jxk_at_theta_bar.push(blocks.to_matrix());
    }
    let blocks: Vec<JxBlocks> = at_bar.iter().map(|(b, _, _)| b.clone()).collect();
    let jx_bar_blocks = JxBlocks::mean(&blocks)?;
    let jx_bar_inverse = jx_bar_blocks.inverse()?;
    let jy_bar = mean_matrix(&at_bar.iter().map(|(_, j, _)| j.clone()).collect::<Vec<_>>());
    let sigma_n = sandwich(&jx_bar_inverse, &jy_bar);

    Ok(MEstimatorResult {
        n,
        mle_jx_bar: mle_jx_blocks.to_matrix(),
        mle_jx_bar_inverse: mle_jx_blocks.inverse()?,
        mle_jy_bar,
        fits,
        mle_estimates,
        theta_bar,
        theta_bar_params,
        theta0_estimates,
        scores_at_theta_bar: at_bar.into_iter().map(|(_, _, s)| s).collect(),
        jxk_at_theta_bar,
        jx_bar: jx_bar_blocks.to_matrix(),
        jx_bar_inverse,
        jy_bar,
        sigma_n,
    })
}

/// Simulates `k` replicates from `truth` and runs [`m_estimator_pipeline`]
/// with labels aligned to `truth`.
pub fn m_estimator_study(
    truth: &ModelParams,
    k: usize,
    sim: &SimConfig,
    config: &FitConfig,
) -> Result<(Vec<Vec<PathStats>>, MEstimatorResult)> {
    if k == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let samples = simulate_replicates(truth, k, sim)?;
    let result = m_estimator_pipeline(&samples, truth.n_regimes(), config, Some(truth))?;
    Ok((samples, result))
}
