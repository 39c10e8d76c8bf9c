use thiserror::Error;

/// Every failure the head, its data files and its harness can surface.
#[derive(Debug, Error)]
pub enum VictrError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("zero-norm vector (norm {norm:e} <= 1e-8) in {context}")]
    ZeroNorm { context: String, norm: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("invalid labels: {0}")]
    Label(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate entry '{0}'")]
    DuplicateEntry(String),
    #[error("entry '{0}' appears before any category header")]
    UnknownCategory(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u8, supported: u8 },
    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    Truncation { expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("class {class} has only {available} clips, {requested} requested")]
    InsufficientClips {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("no class has a positive label")]
    DegenerateClass,
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("unknown ablation '{0}'")]
    UnknownAblation(String),
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VictrError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(VictrError::Shape(msg.into()))
}
