use crate::error::{Error, Result};

/// Sufficient statistics of one observed path: initial state, transition
/// counts and occupation times over the observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStats {
    p: usize,
    initial: usize,
    // p x p row-major, zero diagonal
    counts: Vec<u32>,
    occupancy: Vec<f64>,
    horizon: f64,
}

impl PathStats {
    pub fn new(
        initial: usize,
        counts: Vec<u32>,
        occupancy: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let p = occupancy.len();
        if p < 2 {
            return Err(Error::InvalidPath(format!("need at least 2 states, got {p}")));
        }
        if counts.len() != p * p {
            return Err(Error::InvalidPath(format!(
                "count matrix has {} entries, expected {}",
                counts.len(),
                p * p
            )));
        }
        if initial >= p {
            return Err(Error::InvalidPath(format!("initial state {} out of range", initial + 1)));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidPath(format!("horizon must be positive, got {horizon}")));
        }
        if occupancy.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidPath("occupation times must be non-negative".into()));
        }
        let total: f64 = occupancy.iter().sum();
        if (total - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(Error::InvalidPath(format!(
                "occupation times sum to {total}, horizon is {horizon}"
            )));
        }
        for x in 0..p {
            if counts[x * p + x] != 0 {
                return Err(Error::InvalidPath(format!("self-transition count at state {}", x + 1)));
            }
            let leaves = (0..p).any(|y| counts[x * p + y] > 0);
            if leaves && occupancy[x] == 0.0 {
                return Err(Error::InvalidPath(format!(
                    "transitions out of state {} with zero occupation time",
                    x + 1
                )));
            }
        }
        Ok(Self { p, initial, counts, occupancy, horizon })
    }

    pub fn n_states(&self) -> usize {
        self.p
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    /// Initial-state indicator `B_x`.
    pub fn b(&self, x: usize) -> f64 {
        if x == self.initial {
            1.0
        } else {
            0.0
        }
    }

    pub fn count(&self, x: usize, y: usize) -> u32 {
        self.counts[x * self.p + y]
    }

    /// `N_xy` as a float.
    pub fn n(&self, x: usize, y: usize) -> f64 {
        f64::from(self.counts[x * self.p + y])
    }

    pub fn t(&self, x: usize) -> f64 {
        self.occupancy[x]
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_jumps(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Pooled totals over a sample: `sum_k B^k`, `sum_k N^k` and `sum_k T^k`,
/// accumulated in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledStats {
    pub b: Vec<f64>,
    pub n: Vec<f64>,
    pub t: Vec<f64>,
}

impl PooledStats {
    pub fn from_sample(sample: &[PathStats]) -> Result<Self> {
        let first = sample.first().ok_or(Error::EmptySample)?;
        let p = first.n_states();
        let mut out = Self { b: vec![0.0; p], n: vec![0.0; p * p], t: vec![0.0; p] };
        for s in sample {
            if s.n_states() != p {
                return Err(Error::ShapeMismatch("paths with different state counts".into()));
            }
            out.b[s.initial_state()] += 1.0;
            for x in 0..p {
                out.t[x] += s.t(x);
                for y in 0..p {
                    out.n[x * p + y] += s.n(x, y);
                }
            }
        }
        Ok(out)
    }
}
