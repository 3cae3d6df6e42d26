use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("meshing failed: {0}")]
    Meshing(String),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("evolution solve failed: {0}")]
    Evolution(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
