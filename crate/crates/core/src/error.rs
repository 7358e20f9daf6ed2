use thiserror::Error;

/// Errors raised anywhere in the design / identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material parameters: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("degenerate identification system: {0}")]
    Degenerate(String),

    #[error("initialisation failed: {0}")]
    Init(String),

    #[error("run failed: {0}")]
    Run(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's input rather than the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
