use std::process::ExitCode;

use imc::Error;

/// Failure of a command, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed files, inconsistent settings.
    Input(anyhow::Error),
    /// The data do not support the requested estimate.
    Statistical(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Statistical(_) => ExitCode::from(1),
            Self::Input(_) => ExitCode::from(2),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Statistical(_) => "statistical",
            Self::Input(_) => "input",
        }
    }

    pub fn message(&self) -> String {
        match self {
            Self::Input(e) | Self::Statistical(e) => format!("{e:#}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoCandidates(_) | Error::DegenerateVariance | Error::ZeroVariance => {
                Self::Statistical(e.into())
            }
            other => Self::Input(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Input(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Input(e.into())
    }
}

/// Attach context to a core error while keeping its classification.
pub trait Context<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for imc::Result<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| match CliError::from(e) {
            CliError::Input(e) => CliError::Input(e.context(f())),
            CliError::Statistical(e) => CliError::Statistical(e.context(f())),
        })
    }
}
