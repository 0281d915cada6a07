use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents. `offset` is the byte position of the first
    /// offending byte when known.
    #[error("bad file {path} at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("row {row} has near-zero norm {norm:e}; direction on the sphere is undefined")]
    ZeroRow { row: usize, norm: f64 },

    #[error("projection of point has near-zero norm {norm:e}; embedding direction is undefined")]
    DegenerateProjection { norm: f64 },

    #[error("non-finite value encountered in {context}; training diverged")]
    NonFinite { context: String },

    #[error("normal matrix is singular; retry with ridge > 0")]
    SingularNormalMatrix,

    #[error(
        "coordinate descent did not converge after {sweeps} sweeps (kkt violation {violation:e})"
    )]
    NonConvergence { sweeps: usize, violation: f64 },

    #[error("failed to bracket sparsity budget {target}: tried weights in [{lo:e}, {hi:e}]")]
    BracketFailure { target: usize, lo: f64, hi: f64 },

    #[error("encoding with gamma > 0 requires per-point centers")]
    MissingCenters,

    #[error("database is empty")]
    EmptyDatabase,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
