//! Conditional observed information matrices and derived covariance
//! estimators.
//!
//! * `J_x(theta) = (1/n) sum_k E[-d^2 log f_c | X^k, theta]`, block diagonal
//!   with a diagonal-plus-rank-one block per state for phi and a diagonal
//!   block for the rates. Its inverse is available in closed form.
//! * `J_y(theta) = -(1/n) sum_k d^2 log f_o(X^k | theta)`, the observed
//!   Fisher information, dense in general. Two independent assemblies are
//!   provided: element formulas specialised to the model ([`jy`]) and the
//!   generic three-term conditional-moment formula ([`jy_generic`]).
//!
//! All matrices use the per-path average convention (division by `n`).

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::layout::{pack, FreeParamVector, ParamLayout};
use crate::likelihood::{
    check_sample, complete_hessian, complete_score, path_score, posterior_weights, weighted_stats,
    WeightedStats,
};
use crate::model::ModelParams;
use crate::stats::PathStats;

pub const PSI_TOL: f64 = 1e-10;
pub const PSI_MAX_ITER: usize = 20_000;

/// Structured representation of `J_x`: per state, the diagonal `d_{x,l}`
/// and the rank-one weight `beta_{x,M}` of its phi block, plus the diagonal
/// of the rate block in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct JxBlocks {
    layout: ParamLayout,
    phi_diag: Vec<Vec<f64>>,
    phi_beta: Vec<f64>,
    rate_diag: Vec<f64>,
}

impl JxBlocks {
    pub fn from_weighted(ws: &WeightedStats, theta: &ModelParams) -> Self {
        let layout = ParamLayout::for_model(theta);
        let (p, nm) = (theta.n_states(), theta.n_regimes());
        let n = ws.n_paths() as f64;
        let mut phi_diag = Vec::with_capacity(p);
        let mut phi_beta = Vec::with_capacity(p);
        for x in 0..p {
            phi_diag.push(
                (0..nm - 1)
                    .map(|l| ws.bhat(x, l) / (n * theta.phi(x, l).powi(2)))
                    .collect(),
            );
            phi_beta.push(ws.bhat(x, nm - 1) / (n * theta.phi(x, nm - 1).powi(2)));
        }
        let mut rate_diag = vec![0.0; layout.dim() - layout.n_phi()];
        for m in 0..nm {
            for x in 0..p {
                for y in 0..p {
                    if x != y {
                        let i = layout.rate_index(x, y, m) - layout.n_phi();
                        rate_diag[i] = rate_information(ws.nhat(x, y, m), n, theta.q(x, y, m));
                    }
                }
            }
        }
        Self { layout, phi_diag, phi_beta, rate_diag }
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    /// Entrywise average of structurally identical blocks.
    pub fn mean(blocks: &[JxBlocks]) -> Result<Self> {
        let first = blocks.first().ok_or(Error::EmptySample)?;
        if blocks.iter().any(|b| b.layout != first.layout) {
            return Err(Error::ShapeMismatch("J_x blocks with different layouts".into()));
        }
        let k = blocks.len() as f64;
        let mut out = first.clone();
        for b in &blocks[1..] {
            for (o, v) in out.phi_diag.iter_mut().zip(&b.phi_diag) {
                for (oo, vv) in o.iter_mut().zip(v) {
                    *oo += vv;
                }
            }
            for (o, v) in out.phi_beta.iter_mut().zip(&b.phi_beta) {
                *o += v;
            }
            for (o, v) in out.rate_diag.iter_mut().zip(&b.rate_diag) {
                *o += v;
            }
        }
        out.phi_diag.iter_mut().flatten().for_each(|v| *v /= k);
        out.phi_beta.iter_mut().for_each(|v| *v /= k);
        out.rate_diag.iter_mut().for_each(|v| *v /= k);
        Ok(out)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.layout.dim();
        let nm = self.layout.n_regimes();
        let mut j = DMatrix::zeros(d, d);
        for (x, (diag, &beta)) in self.phi_diag.iter().zip(&self.phi_beta).enumerate() {
            for l in 0..nm - 1 {
                for m in 0..nm - 1 {
                    let v = if l == m { diag[l] + beta } else { beta };
                    j[(self.layout.phi_index(x, l), self.layout.phi_index(x, m))] = v;
                }
            }
        }
        let np = self.layout.n_phi();
        for (i, &v) in self.rate_diag.iter().enumerate() {
            j[(np + i, np + i)] = v;
        }
        j
    }

    /// Closed-form inverse: Sherman-Morrison on each phi block, reciprocal
    /// on the rate diagonal.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.layout.dim();
        let nm = self.layout.n_regimes();
        let mut inv = DMatrix::zeros(d, d);
        for (x, (diag, &beta)) in self.phi_diag.iter().zip(&self.phi_beta).enumerate() {
            if let Some(l) = diag.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::Singular(self.layout.label(self.layout.phi_index(x, l))));
            }
            let denom = 1.0 + beta * diag.iter().map(|v| 1.0 / v).sum::<f64>();
            for l in 0..nm - 1 {
                for m in 0..nm - 1 {
                    let corr = beta / (diag[l] * diag[m] * denom);
                    let v = if l == m { 1.0 / diag[l] - corr } else { -corr };
                    inv[(self.layout.phi_index(x, l), self.layout.phi_index(x, m))] = v;
                }
            }
        }
        let np = self.layout.n_phi();
        for (i, &v) in self.rate_diag.iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::Singular(self.layout.label(np + i)));
            }
            inv[(np + i, np + i)] = 1.0 / v;
        }
        Ok(inv)
    }
}

// Shared by jx and jy so the two agree bit-for-bit when no regime is hidden.
fn rate_information(nhat: f64, n: f64, q: f64) -> f64 {
    nhat / (n * q * q)
}

pub fn jx_blocks(sample: &[PathStats], theta: &ModelParams) -> Result<JxBlocks> {
    Ok(JxBlocks::from_weighted(&weighted_stats(sample, theta)?, theta))
}

pub fn jx(sample: &[PathStats], theta: &ModelParams) -> Result<DMatrix<f64>> {
    Ok(jx_blocks(sample, theta)?.to_matrix())
}

pub fn jx_inverse(sample: &[PathStats], theta: &ModelParams) -> Result<DMatrix<f64>> {
    jx_blocks(sample, theta)?.inverse()
}

/// Observed information from the model-specific element formulas.
///
/// With posterior weights `w` of a path starting in `x0`,
/// `psi_j = w_j - (phi_{x0,j} / phi_{x0,M}) w_M` and `A_{xy,m} = N_xy - q_{xy,m} T_x`:
///
/// * phi-phi: `psi_j psi_l / (phi_j phi_l)` on the `x0` block
/// * rate-rate: `delta N_hat / q^2 - w_l (delta_{ml} - w_m) A_a A_b / (q_a q_b)`
/// * phi-rate: `-w_l (delta_{jl} - psi_j) A_b / (q_b phi_j) + delta_{lM} w_l A_b / (q_b phi_M)`
pub fn jy(sample: &[PathStats], theta: &ModelParams) -> Result<DMatrix<f64>> {
    let ws = weighted_stats(sample, theta)?;
    Ok(jy_from_weighted(sample, theta, &ws))
}

fn jy_from_weighted(sample: &[PathStats], theta: &ModelParams, ws: &WeightedStats) -> DMatrix<f64> {
    let layout = ParamLayout::for_model(theta);
    let (p, nm) = (theta.n_states(), theta.n_regimes());
    let d = layout.dim();
    let np = layout.n_phi();
    let n = sample.len() as f64;

    // rate index -> (x, y, m), in layout order
    let rates: Vec<(usize, usize, usize)> = (0..nm)
        .flat_map(|m| {
            (0..p).flat_map(move |x| (0..p).filter(move |&y| y != x).map(move |y| (x, y, m)))
        })
        .collect();

    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut a = vec![0.0; rates.len()];
    let mut psi = vec![0.0; nm.saturating_sub(1)];
    for s in sample {
        let w = posterior_weights(s, theta);
        let x0 = s.initial_state();
        for (i, &(x, y, m)) in rates.iter().enumerate() {
            let q = theta.q(x, y, m);
            a[i] = (s.n(x, y) - q * s.t(x)) / q;
        }
        let phi_last = theta.phi(x0, nm - 1);
        for j in 0..nm - 1 {
            psi[j] = w[j] - theta.phi(x0, j) / phi_last * w[nm - 1];
        }

        for j in 0..nm - 1 {
            let uj = psi[j] / theta.phi(x0, j);
            for l in 0..nm - 1 {
                let ul = psi[l] / theta.phi(x0, l);
                acc[(layout.phi_index(x0, j), layout.phi_index(x0, l))] += uj * ul;
            }
        }

        for (ia, &(_, _, ma)) in rates.iter().enumerate() {
            for (ib, &(_, _, mb)) in rates.iter().enumerate() {
                let delta = if ma == mb { 1.0 } else { 0.0 };
                acc[(np + ia, np + ib)] -= w[mb] * (delta - w[ma]) * a[ia] * a[ib];
            }
        }

        for j in 0..nm - 1 {
            let row = layout.phi_index(x0, j);
            let phi_j = theta.phi(x0, j);
            for (ib, &(_, _, l)) in rates.iter().enumerate() {
                let delta = if j == l { 1.0 } else { 0.0 };
                let mut v = -w[l] * (delta - psi[j]) * a[ib] / phi_j;
                if l == nm - 1 {
                    v += w[l] * a[ib] / phi_last;
                }
                acc[(row, np + ib)] += v;
                acc[(np + ib, row)] += v;
            }
        }
    }

    let mut j = acc / n;
    for (i, &(x, y, m)) in rates.iter().enumerate() {
        j[(np + i, np + i)] += rate_information(ws.nhat(x, y, m), n, theta.q(x, y, m));
    }
    j
}

/// Observed information from the generic conditional-moment identity
/// `E[-H_c] - E[g_c g_c^T] + E[g_c] E[g_c]^T`, averaged over paths, where
/// the expectations run over the posterior distribution of the regime.
pub fn jy_generic(sample: &[PathStats], theta: &ModelParams) -> Result<DMatrix<f64>> {
    check_sample(sample, theta)?;
    let d = ParamLayout::for_model(theta).dim();
    let nm = theta.n_regimes();
    let mut total = DMatrix::<f64>::zeros(d, d);
    for s in sample {
        let w = posterior_weights(s, theta);
        let mut mean = nalgebra::DVector::<f64>::zeros(d);
        for m in 0..nm {
            let g = complete_score(s, m, theta);
            let h = complete_hessian(s, m, theta);
            total -= h * w[m];
            total -= &g * g.transpose() * w[m];
            mean += g * w[m];
        }
        total += &mean * mean.transpose();
    }
    Ok(total / sample.len() as f64)
}

/// Information matrices evaluated at one parameter point.
#[derive(Debug, Clone)]
pub struct InfoMatrices {
    pub jx: DMatrix<f64>,
    pub jy: DMatrix<f64>,
    pub jx_blocks: JxBlocks,
    pub at_theta: FreeParamVector,
    pub n: usize,
}

impl InfoMatrices {
    pub fn compute(sample: &[PathStats], theta: &ModelParams) -> Result<Self> {
        let ws = weighted_stats(sample, theta)?;
        let blocks = JxBlocks::from_weighted(&ws, theta);
        Ok(Self {
            jx: blocks.to_matrix(),
            jy: jy_from_weighted(sample, theta, &ws),
            jx_blocks: blocks,
            at_theta: pack(theta),
            n: sample.len(),
        })
    }

    pub fn jx_inverse(&self) -> Result<DMatrix<f64>> {
        self.jx_blocks.inverse()
    }

    pub fn sandwich(&self) -> Result<DMatrix<f64>> {
        Ok(sandwich(&self.jx_inverse()?, &self.jy))
    }
}

/// Summary of a run of the recursion
/// `Psi_{l+1} = (I - J_x^{-1} J_y) Psi_l + J_x^{-1}` started at `Psi_0 = 0`.
#[derive(Clone)]
pub struct PsiTrace {
    /// Last iterate.
    pub limit: DMatrix<f64>,
    /// Max-abs entry of each increment `Psi_{l+1} - Psi_l`.
    pub increments: Vec<f64>,
    /// Smallest eigenvalue of each increment.
    pub increment_min_eigenvalues: Vec<f64>,
    pub spectral_radius_estimate: f64,
    pub converged: bool,
}

impl PsiTrace {
    pub fn iterations(&self) -> usize {
        self.increments.len()
    }

    pub fn last_increment(&self) -> f64 {
        self.increments.last().copied().unwrap_or(f64::NAN)
    }

    pub fn limit(&self) -> &DMatrix<f64> {
        &self.limit
    }

    /// Per-step increment ratios; these approach the contraction rate.
    pub fn ratios(&self) -> Vec<f64> {
        self.increments.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn min_increment_eigenvalue(&self) -> f64 {
        self.increment_min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::fmt::Debug for PsiTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PsiTrace")
            .field("dim", &self.limit.nrows())
            .field("iterations", &self.iterations())
            .field("last_increment", &self.last_increment())
            .field("spectral_radius_estimate", &self.spectral_radius_estimate)
            .field("converged", &self.converged)
            .finish()
    }
}

/// Eigenvalues of `J_x^{-1} J_y`, computed through the congruent symmetric
/// matrix `L^T J_y L` with `J_x^{-1} = L L^T`. Sorted ascending.
pub fn relative_eigenvalues(jx_inv: &DMatrix<f64>, jy: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = Cholesky::new(symmetrize(jx_inv))
        .ok_or_else(|| Error::Ordering("J_x^{-1} is not positive definite".into()))?;
    let l = chol.l();
    let s = symmetrize(&(l.transpose() * jy * &l));
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Spectral radius of `I - J_x^{-1} J_y`.
pub fn contraction_rate(jx_inv: &DMatrix<f64>, jy: &DMatrix<f64>) -> Result<f64> {
    let ev = relative_eigenvalues(jx_inv, jy)?;
    Ok(ev.iter().map(|l| (1.0 - l).abs()).fold(0.0, f64::max))
}

/// Requires `J_y > 0` and `J_x >= J_y`: every eigenvalue of `J_x^{-1} J_y`
/// must lie in `(0, 1]`. Equality (no hidden information) gives `A = 0`.
pub fn check_psi_preconditions(jx_inv: &DMatrix<f64>, jy: &DMatrix<f64>) -> Result<()> {
    if jx_inv.shape() != jy.shape() || !jy.is_square() {
        return Err(Error::ShapeMismatch("J_x^{-1} and J_y differ in shape".into()));
    }
    let ev = relative_eigenvalues(jx_inv, jy)?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::Ordering(format!("J_y is not positive definite (eigenvalue {lo:.3e})")));
    }
    if !(hi <= 1.0 + 1e-10) {
        return Err(Error::Ordering(format!(
            "J_x - J_y is not positive definite (J_x^-1 J_y eigenvalue {hi:.6})"
        )));
    }
    Ok(())
}

/// Computes `J_y^{-1}` as the limit of a monotone matrix recursion that only
/// needs `J_x^{-1}`. Starts from `Psi_0 = 0` and stops once the largest
/// entry of the increment falls below `tol`.
pub fn psi_recursion(
    jx_inv: &DMatrix<f64>,
    jy: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<PsiTrace> {
    check_psi_preconditions(jx_inv, jy)?;
    let d = jy.nrows();
    let a = DMatrix::<f64>::identity(d, d) - jx_inv * jy;
    let mut psi = DMatrix::zeros(d, d);
    let mut increments = Vec::new();
    let mut increment_min_eigenvalues = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = &a * &psi + jx_inv;
        let delta = &next - &psi;
        let inc = delta.amax();
        psi = next;
        increments.push(inc);
        increment_min_eigenvalues.push(min_eigenvalue(&delta));
        if inc < tol {
            converged = true;
            break;
        }
    }
    let k = increments.len();
    let span = (k.saturating_sub(1)).min(10);
    let spectral_radius_estimate = if span == 0 {
        0.0
    } else {
        (increments[k - 1] / increments[k - 1 - span]).powf(1.0 / span as f64)
    };
    let trace = PsiTrace {
        limit: psi,
        increments,
        increment_min_eigenvalues,
        spectral_radius_estimate,
        converged,
    };
    if converged {
        Ok(trace)
    } else {
        Err(Error::NonConvergence(Box::new(trace)))
    }
}

/// Like [`psi_recursion`] but returns the last iterate when the iteration
/// budget runs out; ordering violations are still errors.
pub fn psi_recursion_partial(
    jx_inv: &DMatrix<f64>,
    jy: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<PsiTrace> {
    match psi_recursion(jx_inv, jy, tol, max_iter) {
        Err(Error::NonConvergence(trace)) => Ok(*trace),
        other => other,
    }
}

/// `J_x^{-1} J_y J_x^{-1}`, symmetrized.
pub fn sandwich(jx_inv: &DMatrix<f64>, jy: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(jx_inv * jy * jx_inv))
}

/// `J_y^{-1} K_n J_y^{-1}` with `K_n` the average outer product of per-path
/// observed-data scores.
pub fn huber_sandwich(sample: &[PathStats], theta: &ModelParams) -> Result<DMatrix<f64>> {
    let info = InfoMatrices::compute(sample, theta)?;
    let jy_inv = observed_information_inverse(&info)?;
    let d = info.jy.nrows();
    let mut k = DMatrix::<f64>::zeros(d, d);
    for s in sample {
        let g = path_score(s, theta);
        k += &g * g.transpose();
    }
    k /= sample.len() as f64;
    Ok(symmetrize(&(&jy_inv * k * &jy_inv)))
}

/// `J_y^{-1}` through the Psi recursion when its ordering premise holds,
/// otherwise through a dense factorization.
pub fn observed_information_inverse(info: &InfoMatrices) -> Result<DMatrix<f64>> {
    let jx_inv = info.jx_inverse()?;
    if check_psi_preconditions(&jx_inv, &info.jy).is_ok() {
        if let Ok(trace) = psi_recursion(&jx_inv, &info.jy, PSI_TOL, PSI_MAX_ITER) {
            return Ok(symmetrize(trace.limit()));
        }
    }
    dense_inverse(&info.jy)
}

/// Inverse via Cholesky, falling back to LU for indefinite matrices.
pub fn dense_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(symmetrize(m)) {
        return Ok(ch.inverse());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("dense matrix".into()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Scaled tolerance for eigenvalue sign decisions on `A - B`.
fn loewner_tol(diff: &DMatrix<f64>) -> f64 {
    1e-10 * (1.0 + diff.amax())
}

fn loewner_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a - b)
}

/// Strict Loewner order `A > B`: the smallest eigenvalue of `A - B` clears
/// the scaled tolerance. `A > A` is false.
pub fn loewner_greater(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let diff = loewner_diff(a, b)?;
    if diff.nrows() == 0 {
        return Ok(false);
    }
    let tol = loewner_tol(&diff);
    if Cholesky::new(symmetrize(&diff)).is_none() {
        return Ok(false);
    }
    Ok(min_eigenvalue(&diff) > tol)
}

/// Non-strict order `A >= B` up to the scaled tolerance.
pub fn loewner_geq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let diff = loewner_diff(a, b)?;
    if diff.nrows() == 0 {
        return Ok(true);
    }
    Ok(min_eigenvalue(&diff) > -loewner_tol(&diff))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    loewner_greater(m, &DMatrix::zeros(m.nrows(), m.ncols())).unwrap_or(false)
}
