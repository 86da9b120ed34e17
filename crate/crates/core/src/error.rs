use std::path::PathBuf;

/// Errors produced across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time {t} outside [{t0}, {t1}]")]
    OutOfRange { t: f64, t0: f64, t1: f64 },

    #[error("map is empty")]
    EmptyMap,

    #[error("ICP diverged at iteration {iteration}: {inliers} inlier matches")]
    Divergence { iteration: usize, inliers: usize },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("stale prediction: file t_ref {found}, requested {requested}")]
    Stale { found: f64, requested: f64 },

    #[error("goal unreachable")]
    Unreachable,

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } | Error::Unreachable | Error::Optimization(_) => 4,
            Error::Frame { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
