use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum MrsvError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("correlation matrix at t = {t} is not positive definite")]
    NonPdAt { t: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sweep {sweep}: {source}")]
    AtSweep {
        sweep: usize,
        #[source]
        source: Box<MrsvError>,
    },

    #[error("rolling step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<MrsvError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl MrsvError {
    /// True for failures caused by bad input data or files rather than numerics.
    pub fn is_data_error(&self) -> bool {
        match self {
            MrsvError::Data(_)
            | MrsvError::Config(_)
            | MrsvError::Dimension(_)
            | MrsvError::Io(_)
            | MrsvError::Csv(_) => true,
            MrsvError::AtSweep { source, .. } | MrsvError::AtStep { source, .. } => {
                source.is_data_error()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, MrsvError>;
