use thiserror::Error;

pub type Result<T> = std::result::Result<T, SemfxError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemfxError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate knots: need at least {needed} distinct response values, found {found}")]
    DegenerateKnots { needed: usize, found: usize },

    #[error("point {t} is outside the support [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("spline order {0} does not support derivatives (need order >= 2)")]
    UnsupportedOrder(usize),

    #[error("non-finite value encountered at observation {index}: {what}")]
    Numeric { index: usize, what: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("Newton iterations did not converge after {iterations} steps (last gradient sup-norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last_beta: Vec<f64>,
        last_gamma: Vec<f64>,
    },

    #[error("estimates diverge: max |linear predictor| {max_index:.3e} exceeds bound (likely separation)")]
    Divergence { max_index: f64 },

    #[error("Hessian is numerically singular even after ridge regularization")]
    SingularHessian,

    #[error("information matrix is not positive definite: {0}")]
    SingularInformation(String),

    #[error("response collapses to a single level; the discrete model is not identifiable")]
    Collapse,

    #[error("density at the conditional quantile is {density:.3e}; quantile derivative is ill-conditioned")]
    IllConditionedQuantile { density: f64 },

    #[error("negative variance {0:.3e} on the covariance diagonal")]
    NegativeVariance(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {total} replicates failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },
}
