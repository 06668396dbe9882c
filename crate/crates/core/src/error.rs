use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Diagnostics attached to a failed Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDiagnostics {
    pub size: usize,
    pub min_diagonal: f64,
    pub max_diagonal: f64,
    pub last_jitter: f64,
}

impl std::fmt::Display for FactorDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{0}x{0} matrix, diagonal range [{1:e}, {2:e}], jitter {3:e}",
            self.size, self.min_diagonal, self.max_diagonal, self.last_jitter
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("factorization failed ({0})")]
    Factorization(FactorDiagnostics),

    #[error("numerical error at round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ingestion error in {path}: row {row}, column {column}: {message}")]
    Ingestion {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the linear algebra rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Factorization(_) => true,
            Error::AtRound { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            2
        } else {
            1
        }
    }
}
