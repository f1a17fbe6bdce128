use alloc::string::String;
use core::fmt;

/// Errors reported by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An index was outside `0..len`.
    Index { index: usize, len: usize },
    /// An argument lies outside the domain of the operation.
    Domain(String),
    /// The operation is not defined for this task or activation.
    Unsupported(String),
    /// Invalid configuration (length law, order parameters, options).
    Config(String),
    /// Vector or matrix shapes do not agree.
    Dimension { expected: usize, found: usize },
    /// A numerical routine produced a non-finite value or failed to converge.
    Numerical(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Index { index, len } => write!(f, "index {index} out of range for length {len}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Dimension { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
