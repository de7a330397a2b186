use std::io;

use thiserror::Error;

/// Failure categories, each mapped to a process exit code by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numeric,
    Verification,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 1,
            Category::Data => 2,
            Category::Numeric => 3,
            Category::Verification => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("framing error: {0}")]
    Framing(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn shapes(what: &str, a: &[usize], b: &[usize]) -> Self {
        Error::Dimension(format!("{what}: incompatible shapes {a:?} and {b:?}"))
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Divergence(_) => Category::Numeric,
            Error::Verification(_) => Category::Verification,
            Error::Dimension(_)
            | Error::Domain(_)
            | Error::Contract(_)
            | Error::Framing(_)
            | Error::Format(_)
            | Error::Io(_) => Category::Data,
        }
    }
}

/// Errors produced while decoding the binary dataset and checkpoint formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid field: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
