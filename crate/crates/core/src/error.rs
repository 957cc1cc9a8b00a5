use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("design matrix is rank deficient (column {column})")]
    Singular { column: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
