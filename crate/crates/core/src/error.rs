//! Error types shared across the crate.

use alloc::string::String;
use core::fmt;

/// Shape or argument violation raised by tensor operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError(pub String);

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shape error: {}", self.0)
    }
}

impl core::error::Error for ShapeError {}

/// Non-finite value detected during a numeric pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericError {
    /// What produced the bad value (parameter, block, scan id ...).
    pub context: String,
}

impl fmt::Display for NumericError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "non-finite value in {}", self.context)
    }
}

impl core::error::Error for NumericError {}

/// Invalid model or training configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl core::error::Error for ConfigError {}

/// Dataset or volume level failure (bad grid, placement exhaustion ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "data error: {}", self.0)
    }
}

impl core::error::Error for DataError {}

/// Violation of one of the serialized file formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    BadVersion { expected: u32, found: u32 },
    BadDtype(u8),
    Truncated { needed: usize, available: usize },
    LengthMismatch { header: usize, payload: usize },
    BadName,
    BadValue(String),
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic { expected, found } => write!(
                f,
                "bad magic: expected {:?}, found {:?}",
                core::str::from_utf8(expected).unwrap_or("????"),
                found
            ),
            FormatError::BadVersion { expected, found } => {
                write!(f, "unsupported version {found} (expected {expected})")
            }
            FormatError::BadDtype(d) => write!(f, "unknown dtype tag {d}"),
            FormatError::Truncated { needed, available } => {
                write!(f, "truncated payload: need {needed} bytes, have {available}")
            }
            FormatError::LengthMismatch { header, payload } => {
                write!(f, "header declares {header} elements, payload holds {payload}")
            }
            FormatError::BadName => write!(f, "parameter name is not valid UTF-8"),
            FormatError::BadValue(s) => write!(f, "bad value: {s}"),
        }
    }
}

impl core::error::Error for FormatError {}

/// Any failure the crate can produce, for call sites that cross module
/// boundaries (model forward, training loop, file codecs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    Shape(ShapeError),
    Numeric(NumericError),
    Config(ConfigError),
    Data(DataError),
    Format(FormatError),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(e) => e.fmt(f),
            CoreError::Numeric(e) => e.fmt(f),
            CoreError::Config(e) => e.fmt(f),
            CoreError::Data(e) => e.fmt(f),
            CoreError::Format(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for CoreError {}

impl From<ShapeError> for CoreError {
    fn from(e: ShapeError) -> Self {
        CoreError::Shape(e)
    }
}

impl From<NumericError> for CoreError {
    fn from(e: NumericError) -> Self {
        CoreError::Numeric(e)
    }
}

impl From<ConfigError> for CoreError {
    fn from(e: ConfigError) -> Self {
        CoreError::Config(e)
    }
}

impl From<DataError> for CoreError {
    fn from(e: DataError) -> Self {
        CoreError::Data(e)
    }
}

impl From<FormatError> for CoreError {
    fn from(e: FormatError) -> Self {
        CoreError::Format(e)
    }
}
