use thiserror::Error;

use crate::logistic::IterateTrace;
use crate::newton_inverse::InverseRun;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    Asymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("inverse iteration did not reach tol after {} steps (last residual {:e})", .0.steps(), .0.final_residual())]
    InverseNotConverged(Box<InverseRun>),

    #[error("damped Newton hit max_iters={} (last lambda_g {:e})", .0.steps.len().saturating_sub(1), .0.final_lambda_g())]
    NewtonNotConverged(Box<IterateTrace>),

    #[error("budget insufficient: {0}")]
    Budget(String),

    #[error("budget overflow: {field} needs {pieces} pieces, ceiling is {ceiling}")]
    BudgetOverflow { field: &'static str, pieces: u64, ceiling: u64 },

    #[error("prompt layout violation in block `{block}`: {detail}")]
    Layout { block: String, detail: String },

    #[error("layer {index}: {source}")]
    Layer { index: usize, source: Box<Error> },

    #[error("build error: {0}")]
    Build(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that the CLI reports with exit code 2.
    pub fn is_budget_or_convergence(&self) -> bool {
        match self {
            Error::InverseNotConverged(_)
            | Error::NewtonNotConverged(_)
            | Error::Budget(_)
            | Error::BudgetOverflow { .. } => true,
            Error::Layer { source, .. } => source.is_budget_or_convergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
