use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("{0}")]
    Pipeline(#[from] leadlag_fuse::Error),
    #[error("I/O error on {path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 2 is reserved for usage errors reported by the argument parser.
    pub fn exit_code(&self) -> i32 {
        use leadlag_fuse::Error as E;
        match self {
            CliError::Config(_) => 3,
            CliError::MissingInput(_) => 4,
            CliError::Pipeline(E::InvalidArgument(_) | E::InvalidPeriod { .. }) => 3,
            CliError::Pipeline(E::Io { .. }) | CliError::Io(..) => 6,
            CliError::Pipeline(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}
