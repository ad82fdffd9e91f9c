use thiserror::Error;

/// Errors produced by polytope construction, the splitting solver, the
/// predictor, and the training/evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("constraint matrix is rank deficient: singular value {sigma:e} <= threshold {threshold:e}")]
    RankDeficient { sigma: f64, threshold: f64 },

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("non-finite iterate at iteration {iteration} (last residual {residual:e})")]
    NonFinite { iteration: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("negative edge weight {value} at edge {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("normalized regret is undefined: total optimal objective is zero")]
    ZeroDenominator,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that come from numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::TrainingDiverged { .. } | Error::SvdFailed | Error::RankDeficient { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
