use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags, bad configuration values or unknown configuration keys.
    Usage(String),
    /// Unreadable or malformed input files and archives.
    Data(String),
    /// The computation itself failed.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    /// Classify a library error raised while processing input data.
    pub fn from_core(e: nestclust::Error) -> Self {
        use nestclust::Error as E;
        match e {
            E::Numerical(m) => CliError::Numerical(m),
            E::NotPositiveDefinite(_) | E::Undefined(_) => CliError::Numerical(e.to_string()),
            E::InvalidArgument(m) => CliError::Data(m),
            E::Dimension(_) | E::Archive(_) => CliError::Data(e.to_string()),
        }
    }

    /// Classify a library error raised while validating settings.
    pub fn from_core_settings(e: nestclust::Error) -> Self {
        match e {
            nestclust::Error::InvalidArgument(m) => CliError::Usage(m),
            nestclust::Error::Dimension(_) => CliError::Usage(e.to_string()),
            other => CliError::from_core(other),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;
