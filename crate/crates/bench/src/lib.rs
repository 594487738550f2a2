//! Benchmark fixtures.

use rscmjp::model::reference_model;
use rscmjp::simulator::simulate_stats;
use rscmjp::{ModelParams, PathStats, SimConfig};

/// Reference model and a sample of `n` paths over horizon 10.
pub fn fixture(n: usize, seed: u64) -> (ModelParams, Vec<PathStats>) {
    let theta = reference_model();
    let sample = simulate_stats(&theta, &SimConfig::new(n, 10.0, seed).expect("valid config")).expect("simulation");
    (theta, sample)
}
