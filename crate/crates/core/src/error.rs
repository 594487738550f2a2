use thiserror::Error;

use crate::information::PsiTrace;
use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {}", format_violations(.0))]
    InvalidParams(Vec<Violation>),

    #[error("sample is empty")]
    EmptySample,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("matrix is singular at parameter {0}")]
    Singular(String),

    #[error("information ordering violated: {0}")]
    Ordering(String),

    #[error("Psi recursion did not converge after {} iterations (last increment {:.3e})", .0.iterations(), .0.last_increment())]
    NonConvergence(Box<PsiTrace>),

    #[error("degenerate regime: {0}")]
    DegenerateRegime(String),

    #[error("update left the parameter space after {0} step halvings")]
    StepHalving(usize),

    #[error("{0}")]
    InsufficientData(String),

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
