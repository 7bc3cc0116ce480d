use std::path::PathBuf;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate tetrahedron {index} (volume {volume:e})")]
    DegenerateElement { index: usize, volume: f64 },

    #[error("numerically singular 3x3 diagonal block at block row {row}")]
    SingularBlock { row: usize },

    #[error("singular matrix (zero pivot in column {column})")]
    SingularMatrix { column: usize },

    #[error("matrix too large for dense factorization: {dim} > {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("factorization failed on subdomain {subdomain}: {source}")]
    Subdomain {
        subdomain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{solver} did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
