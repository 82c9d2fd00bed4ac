use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or index ranges do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value failed its domain invariant (probabilities, ranges, finiteness).
    #[error("validation failed: {0}")]
    Validation(String),

    /// An operation was called in the wrong cost-feedback mode.
    #[error("mode error: {0}")]
    Mode(String),

    /// The projection solver ran out of iterations before reaching tolerance.
    #[error("projection did not converge: residual {residual:.3e} after {iterations} iterations (tol {tol:.3e})")]
    Convergence {
        residual: f64,
        iterations: usize,
        tol: f64,
    },

    /// The constraint system has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The LP is unbounded above.
    #[error("unbounded linear program: {0}")]
    Unbounded(String),

    /// Experiment configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A run was driven past its planned episode budget.
    #[error("episode budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
