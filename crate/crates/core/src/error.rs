use std::path::PathBuf;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("layer `{0}` may not be sparsified (first, last, or batch-norm layer)")]
    OutOfScope(String),

    #[error("round {round} exceeds total rounds {total}")]
    RoundOutOfRange { round: usize, total: usize },

    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("{path}: truncated record at byte offset {offset}")]
    TruncatedRecord { path: PathBuf, offset: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("config field `{field}`: {message}")]
    ConfigField {
        field: &'static str,
        message: String,
    },

    #[error("partition: {0}")]
    Partition(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
