//! CLI-level error type. Every failure is sorted into one of three
//! categories that map directly onto the process exit codes:
//!
//! | category | exit code | meaning                                        |
//! |----------|-----------|------------------------------------------------|
//! | usage    | 1         | bad flags, bad config values, mismatched setup |
//! | data     | 2         | unreadable/corrupt files, malformed volumes    |
//! | numeric  | 3         | non-finite loss or gradient during optimization|
//!
//! (0 is success.) The `main` wrapper prints one machine-parseable line to
//! stderr — `error: <category>: <message>` — and exits with the code.

use std::fmt;

use aft_core::error::CoreError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }

    /// The one-line form printed to stderr on failure. Newlines inside the
    /// message are flattened so the line stays machine-parseable.
    pub fn report_line(&self) -> String {
        format!(
            "error: {}: {}",
            self.category(),
            self.message().replace('\n', "; ")
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            // Invalid configuration is a usage problem: the caller asked
            // for an impossible setup.
            CoreError::Config(c) => CliError::Usage(c.0),
            // Shape, data, and format violations all mean the *inputs*
            // were bad.
            CoreError::Shape(s) => CliError::Data(s.0),
            CoreError::Data(d) => CliError::Data(d.0),
            CoreError::Format(f) => CliError::Data(format!("{f}")),
            CoreError::Numeric(n) => CliError::Numeric(n.context),
        }
    }
}

impl From<aft_core::error::ConfigError> for CliError {
    fn from(e: aft_core::error::ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<aft_core::error::DataError> for CliError {
    fn from(e: aft_core::error::DataError) -> Self {
        CliError::Data(e.0)
    }
}

impl From<aft_core::error::FormatError> for CliError {
    fn from(e: aft_core::error::FormatError) -> Self {
        CliError::Data(format!("{e}"))
    }
}

/// IO problems count as data errors; the path is folded into the message
/// by the call sites via [`io_ctx`].
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Wraps an IO result with the path that was being touched.
pub fn io_ctx<T>(r: std::io::Result<T>, what: &str, path: &std::path::Path) -> Result<T, CliError> {
    r.map_err(|e| CliError::Data(format!("{what} {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use aft_core::error::{ConfigError, DataError, NumericError, ShapeError};

    #[test]
    fn categories_map_to_documented_exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Data("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
    }

    #[test]
    fn core_errors_land_in_the_right_category() {
        assert_eq!(
            CliError::from(CoreError::from(ConfigError("bad".into()))).exit_code(),
            1
        );
        assert_eq!(
            CliError::from(CoreError::from(ShapeError("bad".into()))).exit_code(),
            2
        );
        assert_eq!(
            CliError::from(CoreError::from(DataError("bad".into()))).exit_code(),
            2
        );
        assert_eq!(
            CliError::from(CoreError::from(NumericError {
                context: "bad".into()
            }))
            .exit_code(),
            3
        );
    }

    #[test]
    fn report_line_is_single_line() {
        let e = CliError::Data("first\nsecond".into());
        let line = e.report_line();
        assert!(!line.contains('\n'));
        assert!(line.starts_with("error: data: "));
    }
}
