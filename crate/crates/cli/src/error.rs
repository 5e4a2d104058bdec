use std::path::PathBuf;

use thiserror::Error;

use crate::state::Stage;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("stage `{needed}` must complete before `{requested}`")]
    StageIncomplete { requested: Stage, needed: Stage },

    #[error("inputs of stage `{0}` changed since it ran; rerun it or pass --force")]
    HashMismatch(Stage),

    #[error("{stage}: {source}")]
    Numerical {
        stage: Stage,
        #[source]
        source: popobs::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Schema {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("state file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl CliError {
    /// 1 for numerical failures, 2 for usage and ordering errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| CliError::Schema { path, source }
    }
}

pub(crate) trait StageContext<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> StageContext<T> for popobs::Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|source| CliError::Numerical { stage, source })
    }
}
