use std::path::PathBuf;

/// Errors of the command-line layer. [`CliError::exit_code`] maps them onto
/// the stable process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub const EXIT_INPUT: i32 = 2;
    pub const EXIT_NUMERIC: i32 = 3;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => Self::EXIT_NUMERIC,
            _ => Self::EXIT_INPUT,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<paced_forest_core::Error> for CliError {
    fn from(e: paced_forest_core::Error) -> Self {
        match e {
            paced_forest_core::Error::Numeric(m) => CliError::Numeric(m),
            paced_forest_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
