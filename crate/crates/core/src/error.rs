use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two directions were used as a co-measured pair but are not orthogonal.
    #[error("directions are not compatible: overlap {overlap:.3e} exceeds tolerance {tol:.1e}")]
    Incompatible { overlap: f64, tol: f64 },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("undefined conditional probability: {0}")]
    UndefinedConditional(String),

    #[error("unidentifiable efficiencies: {0}")]
    Unidentifiable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::UndefinedConditional(_) | Error::Unidentifiable(_) | Error::Construction(_)
        )
    }
}
