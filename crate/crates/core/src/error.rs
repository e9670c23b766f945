use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor or layer extents disagree.
    Shape(String),
    /// Invalid configuration value.
    Config(String),
    /// API used out of order (e.g. backward without a recorded loss).
    Usage(String),
    /// A value left the representable range.
    NonFinite(String),
    /// Bad input data.
    Data(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
