//! Crate-wide error type, with the process exit codes the CLI maps each
//! variant to.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, malformed input file, or violated precondition.
    #[error("config error: {0}")]
    Config(String),
    /// A computation produced non-finite numbers.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// The requested exact computation exceeds the enumeration budget.
    #[error("capability error: {0}")]
    Capability(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code contract: 2 config, 3 numerical, 4 capability.
    /// I/O failures are reported as config errors (unwritable output
    /// directory, missing input file).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
            Error::Capability(_) => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Numerical("x".into()).exit_code(), 3);
        assert_eq!(Error::Capability("x".into()).exit_code(), 4);
    }
}
