use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid model or controller configuration (bad distribution parameters,
    /// inconsistent dimensions, probability level out of range, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A function was called outside its documented domain.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Adaptive quadrature hit its recursion cap before meeting the tolerance.
    #[error(
        "quadrature did not converge on [{lower}, {upper}]: error estimate {error_estimate:e} \
         exceeds tolerance {tolerance:e} after {evaluations} evaluations"
    )]
    Quadrature {
        lower: f64,
        upper: f64,
        error_estimate: f64,
        tolerance: f64,
        evaluations: usize,
    },

    /// The scenario program has no feasible point and soft constraints are disabled.
    #[error("scenario program is infeasible{}", .time.map(|t| format!(" at time step {t}")).unwrap_or_default())]
    Infeasible { time: Option<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Exhaustive removal would need more solves than the configured guard allows.
    #[error("optimal removal needs {count} solves (limit {limit}); use greedy or marginal removal")]
    CombinatorialLimit { count: u128, limit: u128 },

    #[error("sample-removal pair (K={samples}, R={removals}) for constraint {constraint} is not admissible: bound {bound:.6} > epsilon {epsilon}")]
    Inadmissible {
        constraint: usize,
        samples: usize,
        removals: usize,
        bound: f64,
        epsilon: f64,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn with_time(self, t: usize) -> Self {
        match self {
            Error::Infeasible { .. } => Error::Infeasible { time: Some(t) },
            other => other,
        }
    }
}
