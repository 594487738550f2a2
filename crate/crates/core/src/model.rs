//! Parameter space of the regime-switching conditional Markov jump process.
//!
//! A model has `p` states and `M` regimes. Each path starts in state `x` with
//! probability `alpha[x]`, picks regime `m` with probability `phi[x][m]`, and
//! then evolves as a Markov jump process with generator `Q_m` for its whole
//! life. States and regimes are 0-based in code and 1-based in files and
//! labels.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on simplex sums (alpha and each phi row).
pub const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewStates(usize),
    NoRegimes,
    Shape(String),
    NonFinite(String),
    AlphaNegative { x: usize },
    AlphaSum { sum: f64 },
    PhiRowSum { x: usize, sum: f64 },
    PhiNotPositive { x: usize, m: usize },
    RateNotPositive { x: usize, y: usize, m: usize },
    GeneratorDiagonal { x: usize, m: usize, given: f64, expected: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewStates(p) => write!(f, "need at least 2 states, got p={p}"),
            Violation::NoRegimes => write!(f, "need at least 1 regime"),
            Violation::Shape(s) => write!(f, "shape: {s}"),
            Violation::NonFinite(s) => write!(f, "non-finite value in {s}"),
            Violation::AlphaNegative { x } => write!(f, "alpha_{} is negative", x + 1),
            Violation::AlphaSum { sum } => write!(f, "alpha sums to {sum}, expected 1"),
            Violation::PhiRowSum { x, sum } => {
                write!(f, "phi row {} sums to {sum}, expected 1", x + 1)
            }
            Violation::PhiNotPositive { x, m } => {
                write!(f, "phi_{{{},{}}} must be strictly positive", x + 1, m + 1)
            }
            Violation::RateNotPositive { x, y, m } => write!(
                f,
                "q_{{{}{},{}}} must be strictly positive",
                x + 1,
                y + 1,
                m + 1
            ),
            Violation::GeneratorDiagonal { x, m, given, expected } => write!(
                f,
                "q_{{{}{},{}}} = {given} but the row requires {expected}",
                x + 1,
                x + 1,
                m + 1
            ),
        }
    }
}

/// Unchecked parameter tree as it appears in parameter files.
///
/// `Q` holds `M` row-major `p x p` generators. Diagonal entries may be `null`;
/// they are always reconstructed from the off-diagonal row sums.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawParams {
    pub p: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub alpha: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<Vec<Option<f64>>>>,
}

/// Lists every invariant the raw tree violates. Empty means valid.
pub fn validate(raw: &RawParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let (p, nm) = (raw.p, raw.m);
    if p < 2 {
        out.push(Violation::TooFewStates(p));
    }
    if nm < 1 {
        out.push(Violation::NoRegimes);
    }
    if !out.is_empty() {
        return out;
    }

    if raw.alpha.len() != p {
        out.push(Violation::Shape(format!("alpha has {} entries, expected {p}", raw.alpha.len())));
    } else if raw.alpha.iter().any(|a| !a.is_finite()) {
        out.push(Violation::NonFinite("alpha".into()));
    } else {
        for (x, &a) in raw.alpha.iter().enumerate() {
            if a < 0.0 {
                out.push(Violation::AlphaNegative { x });
            }
        }
        let sum: f64 = raw.alpha.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            out.push(Violation::AlphaSum { sum });
        }
    }

    if raw.phi.len() != p || raw.phi.iter().any(|r| r.len() != nm) {
        out.push(Violation::Shape(format!("phi must be {p} x {nm}")));
    } else if raw.phi.iter().flatten().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite("phi".into()));
    } else {
        for (x, row) in raw.phi.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                out.push(Violation::PhiRowSum { x, sum });
            }
            for (m, &v) in row.iter().enumerate() {
                if v <= 0.0 {
                    out.push(Violation::PhiNotPositive { x, m });
                }
            }
        }
    }

    if raw.q.len() != nm || raw.q.iter().any(|g| g.len() != p || g.iter().any(|r| r.len() != p)) {
        out.push(Violation::Shape(format!("Q must hold {nm} matrices of size {p} x {p}")));
        return out;
    }
    for (m, gen) in raw.q.iter().enumerate() {
        for (x, row) in gen.iter().enumerate() {
            let mut exit = 0.0;
            for (y, v) in row.iter().enumerate() {
                if y == x {
                    continue;
                }
                match v {
                    Some(v) if !v.is_finite() => {
                        out.push(Violation::NonFinite(format!("Q_{}", m + 1)));
                    }
                    Some(v) if *v > 0.0 => exit += v,
                    _ => out.push(Violation::RateNotPositive { x, y, m }),
                }
            }
            if let Some(d) = row[x] {
                if (d + exit).abs() > SIMPLEX_TOL * (1.0 + exit) {
                    out.push(Violation::GeneratorDiagonal { x, m, given: d, expected: -exit });
                }
            }
        }
    }
    out
}

/// Validated RSCMJP parameters. Immutable once built.
///
/// Construction canonicalizes the dependent entries: `phi[x][M-1]` is
/// `1 - sum(phi[x][..M-1])` and `q_xx,m` is minus the off-diagonal row sum,
/// so that packing and unpacking round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    p: usize,
    nm: usize,
    alpha: Vec<f64>,
    // p x M row-major
    phi: Vec<f64>,
    // M blocks of p x p row-major
    q: Vec<f64>,
}

impl ModelParams {
    /// Builds parameters from `alpha`, `phi` rows and full generator matrices.
    /// Diagonals of `q` are ignored and reconstructed.
    pub fn new(alpha: Vec<f64>, phi: Vec<Vec<f64>>, q: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = alpha.len();
        let nm = q.len();
        let raw = RawParams {
            p,
            m: nm,
            alpha,
            phi,
            q: q
                .into_iter()
                .map(|g| {
                    g.into_iter()
                        .enumerate()
                        .map(|(x, r)| {
                            r.into_iter()
                                .enumerate()
                                .map(|(y, v)| if x == y { None } else { Some(v) })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        };
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawParams) -> Result<Self> {
        let violations = validate(raw);
        if !violations.is_empty() {
            return Err(Error::InvalidParams(violations));
        }
        let (p, nm) = (raw.p, raw.m);
        let asum: f64 = raw.alpha.iter().sum();
        let alpha = raw.alpha.iter().map(|a| a / asum).collect();
        let mut phi = vec![0.0; p * nm];
        for x in 0..p {
            let mut acc = 0.0;
            for m in 0..nm - 1 {
                phi[x * nm + m] = raw.phi[x][m];
                acc += raw.phi[x][m];
            }
            phi[x * nm + nm - 1] = 1.0 - acc;
        }
        let mut q = vec![0.0; nm * p * p];
        for m in 0..nm {
            for x in 0..p {
                for y in 0..p {
                    if x != y {
                        q[(m * p + x) * p + y] = raw.q[m][x][y].unwrap_or(0.0);
                    }
                }
            }
        }
        Self::from_parts(alpha, phi, q, p, nm)
    }

    /// Assembles from flat storage, recomputing generator diagonals. The last
    /// phi column must already be canonical.
    pub(crate) fn from_parts(
        alpha: Vec<f64>,
        phi: Vec<f64>,
        mut q: Vec<f64>,
        p: usize,
        nm: usize,
    ) -> Result<Self> {
        let mut violations = Vec::new();
        for x in 0..p {
            for m in 0..nm {
                let v = phi[x * nm + m];
                if !(v > 0.0) || !v.is_finite() {
                    violations.push(Violation::PhiNotPositive { x, m });
                }
            }
        }
        for m in 0..nm {
            for x in 0..p {
                let mut exit = 0.0;
                for y in 0..p {
                    if x == y {
                        continue;
                    }
                    let v = q[(m * p + x) * p + y];
                    if !(v > 0.0) || !v.is_finite() {
                        violations.push(Violation::RateNotPositive { x, y, m });
                    }
                    exit += v;
                }
                q[(m * p + x) * p + x] = -exit;
            }
        }
        if !violations.is_empty() {
            return Err(Error::InvalidParams(violations));
        }
        Ok(Self { p, nm, alpha, phi, q })
    }

    pub fn n_states(&self) -> usize {
        self.p
    }

    pub fn n_regimes(&self) -> usize {
        self.nm
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn phi(&self, x: usize, m: usize) -> f64 {
        self.phi[x * self.nm + m]
    }

    pub fn phi_row(&self, x: usize) -> &[f64] {
        &self.phi[x * self.nm..(x + 1) * self.nm]
    }

    pub fn q(&self, x: usize, y: usize, m: usize) -> f64 {
        self.q[(m * self.p + x) * self.p + y]
    }

    /// Total rate of leaving `x` under regime `m`, i.e. `-q_xx,m`.
    pub fn exit_rate(&self, x: usize, m: usize) -> f64 {
        -self.q(x, x, m)
    }

    /// Generator of regime `m` as nested rows.
    pub fn generator(&self, m: usize) -> Vec<Vec<f64>> {
        (0..self.p)
            .map(|x| (0..self.p).map(|y| self.q(x, y, m)).collect())
            .collect()
    }

    /// Marginal regime probabilities `P(Phi = m) = sum_x alpha_x phi_{x,m}`.
    pub fn regime_marginals(&self) -> Vec<f64> {
        (0..self.nm)
            .map(|m| (0..self.p).map(|x| self.alpha[x] * self.phi(x, m)).sum())
            .collect()
    }

    /// Always empty for a constructed value; re-runs the raw checks.
    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.to_raw())
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != self.p {
            return Err(Error::ShapeMismatch(format!(
                "alpha has {} entries, expected {}",
                alpha.len(),
                self.p
            )));
        }
        let mut out = self.clone();
        out.alpha = alpha;
        Ok(out)
    }

    /// Reorders regimes: regime `m` of the result is regime `perm[m]` of `self`.
    pub fn permute_regimes(&self, perm: &[usize]) -> Self {
        let (p, nm) = (self.p, self.nm);
        assert_eq!(perm.len(), nm);
        let mut phi = vec![0.0; p * nm];
        let mut q = vec![0.0; nm * p * p];
        for (m, &src) in perm.iter().enumerate() {
            for x in 0..p {
                phi[x * nm + m] = self.phi(x, src);
                for y in 0..p {
                    q[(m * p + x) * p + y] = self.q(x, y, src);
                }
            }
        }
        // Re-canonicalize the last column so round trips stay exact.
        for x in 0..p {
            let head: f64 = phi[x * nm..x * nm + nm - 1].iter().sum();
            phi[x * nm + nm - 1] = 1.0 - head;
        }
        Self { p, nm, alpha: self.alpha.clone(), phi, q }
    }

    pub fn to_raw(&self) -> RawParams {
        RawParams {
            p: self.p,
            m: self.nm,
            alpha: self.alpha.clone(),
            phi: (0..self.p).map(|x| self.phi_row(x).to_vec()).collect(),
            q: (0..self.nm)
                .map(|m| {
                    (0..self.p)
                        .map(|x| (0..self.p).map(|y| Some(self.q(x, y, m))).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

/// The three-state, three-regime configuration used throughout the
/// simulation study: uniform alpha, the phi table and generators Q_1..Q_3.
pub fn reference_model() -> ModelParams {
    ModelParams::new(
        vec![1.0 / 3.0; 3],
        vec![vec![0.5, 0.3, 0.2], vec![0.25, 0.55, 0.2], vec![0.6, 0.1, 0.3]],
        vec![
            vec![vec![-2.0, 1.2, 0.8], vec![0.2, -0.4, 0.2], vec![1.2, 1.8, -3.0]],
            vec![vec![-3.0, 2.4, 0.6], vec![0.2, -0.4, 0.2], vec![0.4, 1.6, -2.0]],
            vec![vec![-4.0, 1.6, 2.4], vec![0.2, -0.4, 0.2], vec![3.0, 2.0, -5.0]],
        ],
    )
    .expect("reference parameters are valid")
}

/// Random valid model: rates uniform on `[0.2, 3]`, phi rows and alpha
/// normalized uniforms bounded away from zero.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, p: usize, nm: usize) -> Result<ModelParams> {
    let mut simplex = |k: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    };
    let alpha = simplex(p);
    let phi: Vec<Vec<f64>> = (0..p).map(|_| simplex(nm)).collect();
    let q = (0..nm)
        .map(|_| {
            (0..p)
                .map(|x| (0..p).map(|y| if x == y { 0.0 } else { rng.random_range(0.2..3.0) }).collect())
                .collect()
        })
        .collect();
    ModelParams::new(alpha, phi, q)
}
