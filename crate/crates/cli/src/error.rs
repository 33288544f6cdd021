use std::process::ExitCode;

use thiserror::Error;

use divrl_core::error::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0} cell(s) exceeded the wall-clock budget")]
    Budget(usize),

    #[error("{0} cell(s) failed")]
    Cells(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 config error, 2 solver error, 3 budget exceeded.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(CoreError::Config(_) | CoreError::InvalidParams(_)) => 1,
            CliError::Core(CoreError::Budget { .. }) | CliError::Budget(_) => 3,
            CliError::Core(_) | CliError::Cells(_) | CliError::Io(_) => 2,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }

    /// Solver trace, when the core attached one.
    pub fn trace(&self) -> &[String] {
        match self {
            CliError::Core(CoreError::Solver { trace, .. }) => trace,
            _ => &[],
        }
    }
}
