use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("embedding provider failed for {} key(s) [{}]: {msg}", failed_keys.len(), preview_keys(failed_keys))]
    Provider { msg: String, failed_keys: Vec<String> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("no {what} at {path}; run `{step}` first")]
    MissingArtifact {
        what: String,
        path: PathBuf,
        step: &'static str,
    },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

fn preview_keys(keys: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut s = keys.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if keys.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}

impl Error {
    /// Process exit status: 1 usage, 2 data, 3 provider, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. } | Error::Io { .. } | Error::Data(_) | Error::Shape(_) => 2,
            Error::MissingArtifact { .. } | Error::Metric(_) | Error::Serde(_) => 2,
            Error::Provider { .. } => 3,
            Error::NonFinite(_) | Error::Diverged { .. } => 4,
        }
    }

    pub(crate) fn missing(what: impl Into<String>, path: impl Into<PathBuf>, step: &'static str) -> Self {
        Error::MissingArtifact { what: what.into(), path: path.into(), step }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
