use thiserror::Error;

/// CLI failures. `Display` gives the human text; [`CliError::code`] gives the
/// short machine-readable tag printed as `error[code]`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {msg}")]
    Parse { path: String, line: usize, column: usize, msg: String },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rvc_core::Error),
}

impl CliError {
    pub fn io(path: &str, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_string(), source }
    }

    pub fn parse(path: &str, line: usize, column: usize, msg: impl Into<String>) -> Self {
        CliError::Parse { path: path.to_string(), line, column, msg: msg.into() }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn csv(path: &str, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line() as usize);
        let msg = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::io(path, source),
            _ => CliError::parse(path, line, 0, msg),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Input(_) => "input",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                rvc_core::Error::Dimension(_) | rvc_core::Error::InvalidInput(_) | rvc_core::Error::IndexOutOfRange { .. } => "input",
                _ => "numeric",
            },
        }
    }
}
