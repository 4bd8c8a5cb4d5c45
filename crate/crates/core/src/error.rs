use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit-code contract: `Resource` exits with 3,
/// configuration problems surface before this type is involved, and
/// everything else is a runtime/verification failure.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input to an operation.
    #[error("invalid input: {0}")]
    Input(String),

    /// Text-format parse failure with location.
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// A quantity degenerated (constant Fiedler vector, single joint state).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Size cap exceeded for a dense oracle computation.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Eigenfunction training diverged or failed its sanity checks.
    #[error("training failed: {0}")]
    Training(String),

    /// A sample-based estimate failed its validity preconditions.
    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
