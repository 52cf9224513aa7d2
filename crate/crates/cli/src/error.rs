use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("{} check(s) did not match their expected verdicts", .0.len())]
    CheckFailed(Vec<String>),
    #[error("unknown or non-refinable check `{0}`")]
    CheckUnknown(String),
    #[error("malformed data in {path}: {reason}")]
    DataMalformed { path: String, reason: String },
    #[error("numerical failure in {context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: impfrac::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::ConfigInvalid(_) | CliError::CheckUnknown(_) => 2,
            CliError::DataMalformed { .. } => 3,
            CliError::Numeric { .. } | CliError::Io { .. } => 4,
        }
    }

    pub fn numeric(context: impl Into<String>) -> impl FnOnce(impfrac::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Numeric { context, source }
    }

    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().display().to_string();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
