use core::fmt;

/// Errors raised by the pure tile/render kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// A configuration value violates an invariant (zero size, bad range, ...).
    Config(&'static str),
    /// The caller broke an API precondition.
    Usage(&'static str),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Config(msg) => write!(f, "configuration error: {msg}"),
            CoreError::Usage(msg) => write!(f, "usage error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}
