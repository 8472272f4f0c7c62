use std::process::ExitCode;

use thiserror::Error;

/// Process exit codes. The values are stable.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {context}: {source}")]
    Data {
        context: String,
        #[source]
        source: edm_core::Error,
    },

    #[error("runtime error: {context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: edm_core::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Wraps a failure while reading an input.
    pub fn data(context: impl Into<String>) -> impl FnOnce(edm_core::Error) -> Self {
        let context = context.into();
        move |source| CliError::Data { context, source }
    }

    /// Wraps a failure while computing or writing outputs. Argument errors
    /// raised by the library are reported as configuration problems.
    pub fn runtime(context: impl Into<String>) -> impl FnOnce(edm_core::Error) -> Self {
        let context = context.into();
        move |source| match source {
            edm_core::Error::InvalidArgument(msg) => CliError::Config(format!("{context}: {msg}")),
            source => CliError::Runtime { context, source },
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |e| CliError::Runtime { context, source: e.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }
}

impl From<&CliError> for ExitCode {
    fn from(e: &CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
