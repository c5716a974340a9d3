use thiserror::Error;

pub type Result<T, E = ConformalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("level {0} must lie strictly inside (0, 1)")]
    InvalidLevel(f64),

    #[error("dataset is empty")]
    EmptyData,

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("weight is not finite ({0}); clip estimated weights before use")]
    NonFiniteWeight(f64),

    #[error(
        "{size} points exceed the permutation enumeration cap of {cap}; \
         use the covariate-shift weights instead"
    )]
    EnumerationCap { size: usize, cap: usize },

    #[error("row {row}, column {column}: {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    #[error("trial {index} failed: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<ConformalError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
