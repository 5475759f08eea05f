use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate batch: {0} samples, at least 2 required")]
    DegenerateBatch(usize),

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e}){hint}")]
    NotPositiveDefinite { eigenvalue: f64, hint: &'static str },

    #[error("kernel representation is ill-conditioned (eigenvalue {eigenvalue:e}); increase r or sigma")]
    IllConditionedKernel { eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("no cross-venue pairs: every group is a singleton but beta < 1")]
    NoCrossPairs,

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("duplicate venue id {0:?}")]
    DuplicateVenue(String),

    #[error("venue {venue:?}: category {category} outside 1..={max}")]
    CategoryOutOfRange {
        venue: String,
        category: u32,
        max: u32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
