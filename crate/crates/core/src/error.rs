use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic {found:?} at byte offset 0, expected \"LFTR\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("truncated payload: expected {expected} bytes after header at offset {offset}, found {actual}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{extra} trailing bytes after payload end at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("text prompt has no tokens")]
    EmptyText,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("metric/threshold mismatch: metric {metric}, threshold for {threshold}")]
    MetricMismatch {
        metric: &'static str,
        threshold: &'static str,
    },

    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    #[error("merge plan does not match tensor: {0}")]
    PlanMismatch(String),

    #[error("impossible target ratio {ratio}: at most {max}x reachable")]
    ImpossibleTarget { ratio: f64, max: f64 },

    #[error("k = {k} out of range for {n} scores")]
    KOutOfRange { k: usize, n: usize },

    #[error("text strategy requires text tokens")]
    MissingText,

    #[error("topic strategy requires a [CLS] token per frame")]
    MissingCls,

    #[error("config conflict: {0}")]
    ConfigConflict(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("impossible ratio {ratio}: input has only {positions} token positions")]
    ImpossibleRatio { ratio: f64, positions: usize },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("token count must be at least 1")]
    ZeroTokens,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Coarse classification used for process exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::InvalidHeader(_)
            | Error::TruncatedPayload { .. }
            | Error::TrailingBytes { .. }
            | Error::NonFinite { .. }
            | Error::Json(_) => ErrorClass::Io,
            Error::InvalidSpec(_) => ErrorClass::Usage,
            _ => ErrorClass::Config,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "bad-magic",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::InvalidHeader(_) => "invalid-header",
            Error::TruncatedPayload { .. } => "truncated-payload",
            Error::TrailingBytes { .. } => "trailing-bytes",
            Error::NonFinite { .. } => "non-finite-value",
            Error::Shape(_) => "shape-mismatch",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::EmptyText => "empty-text",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::MetricMismatch { .. } => "metric-threshold-mismatch",
            Error::InvalidThreshold(_) => "invalid-threshold",
            Error::PlanMismatch(_) => "plan-tensor-mismatch",
            Error::ImpossibleTarget { .. } => "impossible-target",
            Error::KOutOfRange { .. } => "k-out-of-range",
            Error::MissingText => "missing-text",
            Error::MissingCls => "missing-cls",
            Error::ConfigConflict(_) => "config-conflict",
            Error::InvalidConfig(_) => "invalid-config",
            Error::ImpossibleRatio { .. } => "impossible-ratio",
            Error::InvalidProfile(_) => "invalid-profile",
            Error::ZeroTokens => "zero-tokens",
            Error::Json(_) => "json",
            Error::Io(_) => "io-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Config,
}
