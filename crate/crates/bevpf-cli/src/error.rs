use thiserror::Error;

/// Command-level errors, grouped by exit code.
#[derive(Debug, Error)]
pub enum CmdError {
    /// Usage or configuration problems (exit code 1).
    #[error("config error: {0}")]
    Config(String),

    /// Missing or malformed input data (exit code 2).
    #[error("data error: {0}")]
    Data(String),

    /// The filter aborted with degenerate weights (exit code 3).
    #[error("filter error: {0}")]
    Filter(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 1,
            CmdError::Data(_) => 2,
            CmdError::Filter(_) => 3,
        }
    }
}

impl From<bevpf_core::Error> for CmdError {
    fn from(e: bevpf_core::Error) -> Self {
        match e {
            bevpf_core::Error::DegenerateWeights => CmdError::Filter(e.to_string()),
            bevpf_core::Error::InvalidArgument(_) => CmdError::Config(e.to_string()),
            other => CmdError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Data(format!("io: {e}"))
    }
}
