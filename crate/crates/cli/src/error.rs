use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("output directory {0} does not exist")]
    MissingOutDir(PathBuf),
    #[error("{0}")]
    Parse(String),
    #[error("solver failed: {0}")]
    Solve(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for IO and input problems, 1 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::MissingOutDir(_) | CliError::Parse(_) => 2,
            CliError::Solve(_) => 1,
        }
    }
}

macro_rules! solve_err {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Solve(e.to_string())
            }
        }
    )*};
}

solve_err!(
    harvest_core::transport::TransportError,
    harvest_core::adjoint::AdjointError,
    harvest_core::stationary::StationaryError,
    harvest_core::control::ControlError
);

impl From<harvest_core::ScenarioError> for CliError {
    fn from(e: harvest_core::ScenarioError) -> Self {
        CliError::Parse(e.to_string())
    }
}
