use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("degenerate observation: {0}")]
    DegenerateObservation(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("ill-conditioned geometry: {0}")]
    IllConditioned(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 input, 3 invariant, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_)
            | Error::Input(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Io(_) => 2,
            Error::Invariant(_) | Error::DegenerateObservation(_) => 3,
            Error::Numeric(_) | Error::Projection(_) | Error::IllConditioned(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
