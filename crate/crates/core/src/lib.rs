//! Maximum-likelihood estimation from incomplete data for regime-switching
//! conditional Markov jump processes: EM and EM-Gradient fitting,
//! conditional observed information matrices, a monotone recursion for the
//! inverse observed information, sandwich covariance estimation and a
//! repeated-sampling M-estimator.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod information;
pub mod io;
pub mod layout;
pub mod likelihood;
pub mod model;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
pub use estimators::{fit, FitConfig, FitResult, MEstimatorResult, Method};
pub use information::{InfoMatrices, JxBlocks, PsiTrace};
pub use layout::{pack, unpack, FreeParamVector, ParamIndex, ParamLayout};
pub use likelihood::WeightedStats;
pub use model::{ModelParams, RawParams, Violation};
pub use simulator::{Path, SimConfig};
pub use stats::PathStats;
