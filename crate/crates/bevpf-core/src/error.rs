use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The SE(2) logarithm is not defined at |theta| = pi.
    #[error("ill-conditioned SE(2) logarithm: |theta| = pi")]
    IllConditionedLog,

    /// Every particle weight collapsed to zero likelihood.
    #[error("degenerate particle weights: all log-weights are -inf")]
    DegenerateWeights,

    #[error("timestamp association: {0}")]
    TimestampMismatch(String),

    #[error("container: bad magic (expected \"BPFM\")")]
    BadMagic,

    #[error("container: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("container: truncated file ({0})")]
    Truncated(String),

    #[error("container: non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
