use std::path::PathBuf;

use thiserror::Error;
use xtalk_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_BOUND: u8 = 4;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            CliError::Read { .. } | CliError::Write { .. } | CliError::Config(_) => EXIT_CONFIG,
        }
    }
}

pub fn core_exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidParams(_) | CoreError::ParseError { .. } | CoreError::InvalidBudget(_) | CoreError::Io(_) => {
            EXIT_CONFIG
        }
        CoreError::BoundInapplicable(_)
        | CoreError::BitDepthTooSmall { .. }
        | CoreError::FloorNonpositive { .. }
        | CoreError::TargetUnreachable { .. } => EXIT_BOUND,
        CoreError::TrialFailed { source, .. } => core_exit_code(source),
        CoreError::DominanceViolation { .. }
        | CoreError::SingularDiagonal { .. }
        | CoreError::InsufficientData(_)
        | CoreError::SingularChannel { .. }
        | CoreError::RangeError { .. }
        | CoreError::NumericalError(_)
        | CoreError::RelativeLossUndefined { .. } => EXIT_NUMERICAL,
    }
}
