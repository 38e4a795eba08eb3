use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so that front ends can map them onto exit codes:
/// parameter problems, data/format/I-O problems, and numerical failures.
#[derive(Debug, Error)]
pub enum EsiError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate geometry: {0}")]
    Construction(String),

    #[error("could not place {n_sources} non-overlapping sources after {attempts} attempts")]
    Placement { n_sources: usize, attempts: usize },

    #[error("integration blew up (|state| > 1e6) with parameters {params}")]
    Instability { params: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("result undefined: {0}")]
    Undefined(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl EsiError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EsiError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        EsiError::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EsiError>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(EsiError::Parameter(msg.into()))
}
