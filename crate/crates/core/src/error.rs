use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {received}")]
    Dimension {
        context: &'static str,
        expected: usize,
        received: usize,
    },

    #[error("class {class_id} has {count} samples, at least {required} are required")]
    InsufficientData {
        class_id: usize,
        count: usize,
        required: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no old classes are present (initial task has no old-class term)")]
    EmptyOld,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("covariance of class {class_id} could not be factorized after jitter escalation")]
    Degenerate { class_id: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error at byte {offset}: {kind}")]
    Parse { offset: u64, kind: ParseErrorKind },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic([u8; 4]),
    UnsupportedVersion(u32),
    Truncated,
    BadSplit(u8),
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseErrorKind::BadMagic(m) => write!(f, "bad magic {m:?}"),
            ParseErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            ParseErrorKind::Truncated => f.write_str("file truncated"),
            ParseErrorKind::BadSplit(s) => write!(f, "invalid split tag {s}"),
        }
    }
}

/// Coarse classification used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter { .. } | Error::Config(_) | Error::EmptyOld => ErrorClass::Config,
            Error::Dimension { .. }
            | Error::InsufficientData { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Serialize(_) => ErrorClass::Data,
            Error::NonFinite { .. } | Error::Degenerate { .. } | Error::Invariant(_) => {
                ErrorClass::Numerical
            }
        }
    }
}
