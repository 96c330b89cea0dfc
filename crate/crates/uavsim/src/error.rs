use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// Bad configuration or empty input (CLI exit code 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Out-of-domain argument, e.g. zero distance in a pathloss model.
    #[error("domain error: {0}")]
    Domain(String),
    /// Runtime numerical failure (CLI exit code 3).
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
