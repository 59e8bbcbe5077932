use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("invalid noise spec: {0}")]
    InvalidNoiseSpec(String),

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("spatial size {h}x{w} must be divisible by {required} for this architecture")]
    Indivisible { h: usize, w: usize, required: usize },

    #[error("backward requires a scalar (1,1,1,1) loss, got {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("no gradient recorded for parameter `{0}`")]
    MissingGrad(String),

    #[error("training diverged at step {step} (loss is not finite)")]
    Diverged {
        step: usize,
        last_good: Box<crate::io::checkpoint::Checkpoint>,
    },

    #[error("image format error at byte {offset}: {detail}")]
    ImageFormat { offset: usize, detail: String },

    #[error("checkpoint magic mismatch: expected NIBKIT01, found {0:?}")]
    CheckpointMagic(Vec<u8>),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated: need {needed} bytes, file has {actual}")]
    CheckpointTruncated { needed: usize, actual: usize },

    #[error("checkpoint inconsistent at parameter `{name}`: {detail}")]
    CheckpointInconsistent { name: String, detail: String },

    #[error("corpus target unreachable: {0}")]
    CorpusUnreachable(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png: {0}")]
    Png(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::InvalidNoiseSpec(_) => "noise_spec",
            Error::InvalidModelConfig(_) => "model_config",
            Error::Indivisible { .. } => "indivisible",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::MissingGrad(_) => "missing_grad",
            Error::Diverged { .. } => "diverged",
            Error::ImageFormat { .. } => "image_format",
            Error::CheckpointMagic(_) => "checkpoint_magic",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::CheckpointTruncated { .. } => "checkpoint_truncated",
            Error::CheckpointInconsistent { .. } => "checkpoint_inconsistent",
            Error::CorpusUnreachable(_) => "corpus_unreachable",
            Error::Corpus(_) => "corpus",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Png(_) => "png",
            Error::Json(_) => "json",
        }
    }
}
