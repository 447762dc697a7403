use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] splatforge_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse { file: PathBuf, line: usize, message: String },

    #[error("{file}:{line}: unsupported camera model {model}")]
    UnsupportedCameraModel { file: PathBuf, line: usize, model: String },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("verification failed: {}", .0.join("; "))]
    VerificationFailed(Vec<String>),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(file: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost non-stage error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_gate_trip(&self) -> bool {
        matches!(
            self.root(),
            Error::Core(splatforge_core::Error::AlignmentGateFailed { .. })
                | Error::Core(splatforge_core::Error::OdometryBreak { .. })
        )
    }

    /// Process exit status: 2 for a gate trip, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_gate_trip() {
            2
        } else {
            1
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
