//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },

    #[error("column role conflict: {0}")]
    RoleConflict(String),

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("tilt normalizer overflow: |delta * a| reaches {0:.2}, cap is {1}")]
    NormalizerOverflow(f64, f64),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("degenerate variance at delta = {0}")]
    DegenerateVariance(f64),

    #[error("singular design matrix")]
    SingularDesign,

    #[error("{op} is unsupported for continuous exposure")]
    UnsupportedForContinuous { op: &'static str },

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Attach a fold index to an error propagated out of a cross-fitting job.
    pub fn in_fold(self, fold: usize) -> Self {
        Error::InFold {
            fold,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingValue { .. }
                | Error::RoleConflict(_)
                | Error::EmptyDataset
                | Error::Domain(_)
                | Error::UnsupportedForContinuous { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
