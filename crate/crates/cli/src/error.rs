use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or parameters. Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Anything wrong with the inputs or while processing them. Exit code 2.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
        }
    }

    /// `error: <kind>: <message>` on one line.
    pub fn line(&self) -> String {
        let msg: String = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: {}: {msg}", self.kind())
    }

    pub fn data(context: impl std::fmt::Display, err: weaksed::Error) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }

    /// Like [`CliError::data`], unless the error already names a file.
    pub fn at(path: &std::path::Path, err: weaksed::Error) -> Self {
        match err {
            weaksed::Error::Io { .. } | weaksed::Error::Format { .. } | weaksed::Error::Unsupported { .. } => err.into(),
            other => Self::data(path.display(), other),
        }
    }
}

impl From<weaksed::Error> for CliError {
    fn from(e: weaksed::Error) -> Self {
        match e {
            weaksed::Error::Param(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
