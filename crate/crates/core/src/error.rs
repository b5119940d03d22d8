use std::path::PathBuf;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient negatives: batch of {0} items, need at least 2")]
    InsufficientNegatives(usize),

    #[error("empty batch in {0}")]
    EmptyBatch(&'static str),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint manifest is corrupt: {0}")]
    CorruptManifest(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch for tensor `{name}`: {detail}")]
    ShapeMismatch { name: String, detail: String },

    #[error("checkpoint payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("malformed metrics line {line}: {message}")]
    MetricsLine { line: usize, message: String },

    #[error("run aborted at episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used as the machine-parsable prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InsufficientNegatives(_) => "insufficient-negatives",
            Error::EmptyBatch(_) => "empty-batch",
            Error::Solve(_) => "solve",
            Error::Config { .. } => "config",
            Error::CorruptManifest(_) => "corrupt-manifest",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::PayloadLength { .. } => "payload-length",
            Error::MetricsLine { .. } => "metrics-line",
            Error::Episode { .. } => "episode",
            Error::Io { .. } => "io",
            Error::Plot(_) => "plot",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
