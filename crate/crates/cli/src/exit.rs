use victr::VictrError;

/// Process exit statuses.
pub const OK: u8 = 0;
/// Command line does not parse.
pub const USAGE: u8 = 2;
/// Inconsistent shapes, configuration or synthetic spec.
pub const SHAPE_OR_CONFIG: u8 = 3;
/// Zero norms, non-finite values, divergence, out-of-range arguments.
pub const NUMERIC: u8 = 4;
/// Bundle or checkpoint file is malformed.
pub const DATA_FORMAT: u8 = 5;
/// Labels unusable for the requested metric or loss.
pub const LABEL: u8 = 6;
/// Vocabulary manifest problems.
pub const VOCABULARY: u8 = 7;
/// Filesystem errors.
pub const IO: u8 = 8;
/// Gradient check above threshold, or too few clips to sample.
pub const CHECK_FAILED: u8 = 9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Victr(#[from] VictrError),
    #[error("gradient check failed: max relative error {error:.3e} exceeds {threshold:.1e}")]
    GradCheck { error: f64, threshold: f64 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Victr(VictrError::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::GradCheck { .. } => CHECK_FAILED,
            CliError::Json(_) => IO,
            CliError::Victr(e) => match e {
                VictrError::Shape(_) | VictrError::Config(_) | VictrError::Spec(_) | VictrError::UnknownAblation(_) => {
                    SHAPE_OR_CONFIG
                }
                VictrError::ZeroNorm { .. }
                | VictrError::NonFinite(_)
                | VictrError::Range(_)
                | VictrError::Divergence { .. } => NUMERIC,
                VictrError::MagicMismatch { .. }
                | VictrError::Version { .. }
                | VictrError::Truncation { .. }
                | VictrError::Checksum { .. } => DATA_FORMAT,
                VictrError::Label(_) | VictrError::DegenerateClass => LABEL,
                VictrError::Parse { .. } | VictrError::DuplicateEntry(_) | VictrError::UnknownCategory(_) => VOCABULARY,
                VictrError::Io(_) => IO,
                VictrError::InsufficientClips { .. } => CHECK_FAILED,
            },
        }
    }
}
