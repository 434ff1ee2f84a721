use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A precondition on shapes, sizes or values was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A gradient or parameter became NaN/inf during optimization.
    #[error("non-finite value in {tensor} at flat index {index}: {value}")]
    NonFinite {
        tensor: String,
        index: usize,
        value: f64,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::invalid!($($arg)*));
        }
    };
}

pub(crate) use {ensure, invalid};
