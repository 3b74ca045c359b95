use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    BoundViolated(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema(_) => 3,
            Self::MissingInput(_) => 4,
            Self::Divergence(_) => 5,
            Self::BoundViolated(_) => 6,
            Self::Runtime(_) => 7,
            Self::Format(_) => 8,
        }
    }
}

impl From<homarl::Error> for CliError {
    fn from(e: homarl::Error) -> Self {
        use homarl::Error as E;
        match e {
            E::Config(_) | E::Domain(_) => Self::Schema(e.to_string()),
            E::Divergence(_) => Self::Divergence(e.to_string()),
            E::Format(_) => Self::Format(e.to_string()),
            E::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => Self::MissingInput(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
