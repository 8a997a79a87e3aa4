use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fssl_core::Error),

    #[error("cannot parse config {}: {message}", path.display())]
    ConfigParse { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    /// Inputs an earlier step should have produced are absent or unreadable.
    #[error("{0}")]
    MissingData(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse report {}: {source}", path.display())]
    Report {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 configuration, 3 data, 4 non-finite numerics, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use fssl_core::Error as E;
        match self {
            CliError::ConfigParse { .. } | CliError::Usage(_) => EXIT_CONFIG,
            CliError::MissingData(_) | CliError::Io { .. } | CliError::Report { .. } => EXIT_DATA,
            CliError::Core(e) => match e {
                E::Config { .. } => EXIT_CONFIG,
                E::Numeric(_) => EXIT_NUMERIC,
                E::Io { .. } | E::Image { .. } | E::Csv { .. } | E::Format { .. } => EXIT_DATA,
                _ => EXIT_OTHER,
            },
        }
    }
}
