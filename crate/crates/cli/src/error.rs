use std::fmt;

use mfpca::MfpcaError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration, detected before any work.
    Usage(String),
    Io(String),
    Stage { stage: &'static str, source: MfpcaError },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use MfpcaError::*;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Stage { source, .. } => match source {
                InvalidArgument(_) | InvalidVariance(_) | IndexError(_) => 2,
                Io(_) => 3,
                InsufficientData(_) => 5,
                NoVariance | SingularSystem { .. } | SeparationDetected | RankDeficient | BandPowerUndefined { .. } => 6,
                _ => 4,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "invalid arguments: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Stage { stage, source } => write!(f, "{stage}: {source}"),
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for Result<T, MfpcaError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
