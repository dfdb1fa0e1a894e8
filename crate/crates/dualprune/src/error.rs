use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

/// Error type shared by every module in this crate.
///
/// The four variants map onto the process exit codes used by the CLI:
/// validation errors exit 1, format and I/O errors exit 2, and domain
/// (runtime math) errors exit 3.
#[derive(Debug)]
pub enum Error {
    /// An argument or input value violates a precondition.
    Validation(String),
    /// A file exists but its contents do not match the expected layout.
    Format(String),
    /// The operating system rejected a read or write.
    Io { path: PathBuf, source: io::Error },
    /// A computation left its mathematical domain (zero norms, empty supports).
    Domain(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            Error::Format(_) | Error::Io { .. } => 2,
            Error::Domain(_) => 3,
        }
    }

    /// Prefix the message with surrounding context, keeping the variant
    /// (and therefore the exit code) intact.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            io @ Error::Io { .. } => io,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(m) => write!(f, "invalid argument: {m}"),
            Error::Format(m) => write!(f, "bad file format: {m}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Domain(m) => write!(f, "domain error: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_variant() {
        assert_eq!(Error::validation("x").exit_code(), 1);
        assert_eq!(Error::format("x").exit_code(), 2);
        assert_eq!(
            Error::io("p", io::Error::new(io::ErrorKind::NotFound, "gone")).exit_code(),
            2
        );
        assert_eq!(Error::domain("x").exit_code(), 3);
    }

    #[test]
    fn context_preserves_variant() {
        let err = Error::domain("all-zero score vector").with_context("epoch 3 (selection)");
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("epoch 3"));
    }
}
