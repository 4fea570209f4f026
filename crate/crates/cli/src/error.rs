use std::fmt;

/// Failure with its documented exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or invalid config, unwritable paths: 2.
    Usage(String),
    /// Corpus, checkpoint or shape problems: 3.
    Data(String),
    /// Alert delivery failed: 4.
    Gateway(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
            Self::Gateway(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Gateway(m) => f.write_str(m),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn data(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}
