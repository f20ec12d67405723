use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("rank {rank} out of bounds [1, {max}]")]
    RankBounds { rank: usize, max: usize },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("induced Markov chain is not ergodic: {0}")]
    Ergodicity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("backward called without a forward cache")]
    MissingCache,
}

impl Error {
    /// True for errors caused by user-provided configuration rather than
    /// by a numerical breakdown during computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Dimension(_) | Error::RankBounds { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
