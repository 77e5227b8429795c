//! Error type shared across the toolkit.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Parameter outside its documented domain (construction-time).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Input outside an operation's domain (call-time).
    #[error("domain error: {0}")]
    Domain(String),
    /// Truncated spectral series produced a non-positive density value;
    /// the configured term count is too small for this time.
    #[error("series truncation failure at t={t}: {n_terms} terms gave non-positive density {value}")]
    NumericalTruncation { t: f64, n_terms: usize, value: f64 },
    /// A computation produced NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// Stick-breaking transform is singular at this point (some v_j = 1).
    #[error("singular transform: {0}")]
    SingularTransform(String),
    /// Operation requires a configuration this instance does not satisfy.
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),
    /// Array shapes inconsistent with the call contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Persisted artifact carries an unknown format version.
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    /// Persisted artifact failed its payload checksum.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    /// Persisted artifact is shorter than its header promises.
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    /// Retry-capped search exhausted its budget.
    #[error("retry cap exhausted after {attempts} attempts")]
    RetryCapExhausted { attempts: u64 },
}
