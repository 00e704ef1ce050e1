use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Model(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<gsmdet_core::Error> for CliError {
    fn from(e: gsmdet_core::Error) -> Self {
        use gsmdet_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::UnknownDetector { .. } => {
                CliError::Config(e.to_string())
            }
            E::Io { .. } | E::CorruptFile(_) | E::VersionMismatch { .. } | E::Manifest(_) => CliError::Io(e.to_string()),
            E::ModelMismatch(_) => CliError::Model(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
