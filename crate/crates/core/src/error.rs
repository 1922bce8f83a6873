use thiserror::Error;

/// Errors raised by environments, networks, critics and trainers.
#[derive(Debug, Error)]
pub enum DopError {
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DopError>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::DopError::$variant(format!($($arg)*)));
        }
    };
}
pub(crate) use ensure;
