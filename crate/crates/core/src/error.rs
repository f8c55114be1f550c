use thiserror::Error;

/// Errors raised by the library. Bound violations are never errors; they are
/// reported through certificates with negative slack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("empty basis")]
    EmptyBasis,

    #[error("predictor lies outside the span of the class (projection residual {residual:.3e})")]
    OutsideSpan { residual: f64 },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("weak-learner class invariant violated: {0}")]
    ClassInvariant(String),

    #[error("dynamic-programming budget exceeded: {dimension} is {got}, limit {limit}")]
    Budget {
        dimension: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("base-model source exhausted: need {needed} records, have {available}")]
    SourceExhausted { needed: usize, available: usize },

    #[error("network graph is not acyclic (node {0} is on a cycle)")]
    Cycle(usize),

    #[error("loss certificate failed: {0}")]
    LossCertificate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            what,
            expected,
            got,
        })
    }
}
