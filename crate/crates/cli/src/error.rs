use std::path::{Path, PathBuf};

use flowguide_core::CoreError;
use flowguide_models::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage or configuration, 2 failed check, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Check(_) => 2,
            CliError::Io { .. } | CliError::MissingArtifact { .. } | CliError::Csv { .. } => 3,
            CliError::Core(e) | CliError::Model(ModelError::Core(e)) => core_code(e),
            CliError::Model(_) => 2,
        }
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_) | CoreError::InvalidArgument(_) | CoreError::Shape { .. } => 1,
        CoreError::Format { .. } | CoreError::Io(_) => 3,
    }
}
