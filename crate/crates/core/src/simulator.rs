//! Sampling of RSCMJP paths.
//!
//! Every path draws from its own ChaCha8 stream: the generator is keyed by
//! the 64-bit seed (expanded with `seed_from_u64`) and the stream number is
//! the path index. Paths are therefore identical no matter how many threads
//! generate them or in which order. Exponential holding times use the
//! inverse CDF `-ln(U) / rate` with `U` uniform on `(0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::stats::PathStats;

pub const DEFAULT_HORIZON: f64 = 10.0;

/// A simulated trajectory. `regime` is the hidden label and is kept only so
/// tests can check the sampler; estimators take [`PathStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// `(state, entry_time)` pairs, 0-based states.
    pub events: Vec<(usize, f64)>,
    pub regime: usize,
    pub horizon: f64,
}

impl Path {
    pub fn n_jumps(&self) -> usize {
        self.events.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n_paths: usize, horizon: f64, seed: u64) -> Result<Self> {
        let cfg = Self { n_paths, horizon, seed };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// Generator for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a base seed with a replicate number (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, replicate: u64) -> u64 {
    let mut z = seed ^ replicate.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    -u.ln() / rate
}

pub fn simulate_path<R: Rng + ?Sized>(theta: &ModelParams, horizon: f64, rng: &mut R) -> Path {
    let p = theta.n_states();
    let x0 = categorical(rng, theta.alpha());
    let regime = categorical(rng, theta.phi_row(x0));
    let mut events = vec![(x0, 0.0)];
    let mut state = x0;
    let mut t = 0.0;
    let mut jump_weights = vec![0.0; p];
    loop {
        let rate = theta.exit_rate(state, regime);
        t += exponential(rng, rate);
        if t >= horizon {
            break;
        }
        for (y, w) in jump_weights.iter_mut().enumerate() {
            *w = if y == state { 0.0 } else { theta.q(state, y, regime) };
        }
        state = categorical(rng, &jump_weights);
        events.push((state, t));
    }
    Path { events, regime, horizon }
}

pub fn simulate_sample(theta: &ModelParams, config: &SimConfig) -> Result<Vec<Path>> {
    config.check()?;
    Ok((0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(config.seed, i as u64);
            simulate_path(theta, config.horizon, &mut rng)
        })
        .collect())
}

pub fn path_stats(path: &Path, p: usize) -> Result<PathStats> {
    let (first, _) = *path
        .events
        .first()
        .ok_or_else(|| Error::InvalidPath("path has no events".into()))?;
    let mut counts = vec![0u32; p * p];
    let mut occupancy = vec![0.0; p];
    for w in path.events.windows(2) {
        let ((x, tx), (y, ty)) = (w[0], w[1]);
        if x >= p || y >= p || x == y || ty <= tx {
            return Err(Error::InvalidPath(format!("bad event pair ({x}, {tx}) -> ({y}, {ty})")));
        }
        counts[x * p + y] += 1;
        occupancy[x] += ty - tx;
    }
    let &(last, tlast) = path.events.last().expect("nonempty");
    if last >= p || tlast > path.horizon {
        return Err(Error::InvalidPath("last event beyond horizon or state range".into()));
    }
    occupancy[last] += path.horizon - tlast;
    PathStats::new(first, counts, occupancy, path.horizon)
}

/// Simulates a sample and reduces it to sufficient statistics.
pub fn simulate_stats(theta: &ModelParams, config: &SimConfig) -> Result<Vec<PathStats>> {
    simulate_sample(theta, config)?
        .iter()
        .map(|path| path_stats(path, theta.n_states()))
        .collect()
}
