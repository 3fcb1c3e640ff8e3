use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cugro::Error),

    #[error("invalid configuration {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("missing dataset(s): {}", list_paths(.0))]
    MissingData(Vec<PathBuf>),

    #[error("no checkpoint in {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn list_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for bad or missing data, 4 for
    /// numerical divergence, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use cugro::Error as E;
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::MissingData(_) | CliError::MissingCheckpoint(_) | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Domain(_) => 2,
                E::Io { .. } | E::Format { .. } | E::Table { .. } | E::Consistency(_) | E::MissingHead { .. } => 3,
                E::NonFinite(_) | E::Sampling { .. } => 4,
                E::Shape(_) | E::Invariant(_) => 1,
            },
        }
    }
}
