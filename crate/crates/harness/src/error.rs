use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] hetnet_core::Error),

    #[error("missing stage: {stage} (expected {})", path.display())]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("artifact {} has version {found}, expected {expected}", path.display())]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Stable identifier for the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(_) => "core",
            Self::MissingStage { .. } => "missing_stage",
            Self::Io { .. } => "io",
            Self::Json { .. } => "json",
            Self::Config(_) => "config",
            Self::Version { .. } => "version",
            Self::Csv(_) => "csv",
        }
    }
}
