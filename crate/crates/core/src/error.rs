use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("time step {dt} violates the stability bound {bound}")]
    Stability { dt: f64, bound: f64 },

    #[error("flow is not certified nonsingular (certified lower bound of |Y|^2 is {lower_bound})")]
    Singular { lower_bound: f64 },

    #[error("1-form is not strongly adapted: {0}")]
    NotStronglyAdapted(String),

    #[error("pullback along this map is not a trigonometric polynomial; use the approximate pullback")]
    UnsupportedPullback,

    #[error("fit residual {residual:e} exceeds tolerance {tolerance:e}")]
    FitResidual { residual: f64, tolerance: f64 },

    #[error("no isometric flat embedding found in the candidate set (smallest residual {best_residual:e})")]
    CandidateSetExhausted { best_residual: f64 },

    #[error("estimated reach {reach:e} is below the threshold {threshold:e}")]
    ReachTooSmall { reach: f64, threshold: f64 },

    #[error("metric is not positive definite after raising C to {c}")]
    MetricNotPositive { c: f64 },

    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),

    #[error("LP verdict inconclusive: {0}")]
    Inconclusive(String),

    #[error("turing: {0}")]
    Turing(#[from] crate::turing::TuringError),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
