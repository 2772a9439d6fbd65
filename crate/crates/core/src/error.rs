use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. Messages carry no category prefix;
/// callers pair them with [`Error::category`].
///
/// Each variant maps onto a stable machine-readable category (see
/// [`Error::category`]) and a process exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Integrity(String),

    #[error("{0}")]
    Schema(String),

    #[error("{0}")]
    Contract(String),

    #[error("{0}")]
    Shape(String),

    #[error("{count} metapaths of length {length} start at node type `{node_type}` (cap {cap}); lower the metapath length")]
    MetapathCap {
        node_type: String,
        length: usize,
        count: usize,
        cap: usize,
    },

    #[error("{0}")]
    ResourceGuard(String),

    #[error("{0}")]
    NonFinite(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    CheckpointFormat(String),

    #[error("{0}")]
    TaskMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Integrity(_) => "integrity",
            Error::Schema(_) => "schema",
            Error::Contract(_) => "contract",
            Error::Shape(_) => "shape",
            Error::MetapathCap { .. } => "metapath_cap_exceeded",
            Error::ResourceGuard(_) => "resource_guard",
            Error::NonFinite(_) => "numeric",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::CheckpointFormat(_) => "checkpoint_format",
            Error::TaskMismatch(_) => "task_mismatch",
            Error::Io { .. } => "io",
        }
    }

    /// 0 success; 1 usage/config; 2 data integrity; 3 numeric failure;
    /// 4 resource guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::TaskMismatch(_) => 1,
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Schema(_)
            | Error::CheckpointFormat(_)
            | Error::Io { .. } => 2,
            Error::NonFinite(_) => 3,
            Error::MetapathCap { .. } | Error::ResourceGuard(_) => 4,
            Error::Contract(_) | Error::Shape(_) => 1,
        }
    }
}
