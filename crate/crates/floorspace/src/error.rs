use std::io;
use std::path::PathBuf;

use floorspace_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic { path: PathBuf, found: [u8; 4], expected: [u8; 4] },
    #[error("{path}: truncated {what}: expected {expected} bytes, got {got}")]
    Truncated { path: PathBuf, what: &'static str, expected: usize, got: usize },
    #[error("{path}: unknown dtype code {code}")]
    UnknownDtype { path: PathBuf, code: u32 },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Self::Format { path: path.into(), detail: detail.into() }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::BadMagic { .. } => "bad_magic",
            Self::Truncated { .. } => "truncated",
            Self::UnknownDtype { .. } => "unknown_dtype",
            Self::Format { .. } => "format",
            Self::Config(_) => "config",
            Self::MissingInput(_) => "missing_input",
            Self::CheckFailed(_) => "check_failed",
            Self::Core(e) => match e {
                CoreError::Validation(_) => "validation",
                CoreError::Bounds(_) => "bounds",
                CoreError::Alignment(_) => "alignment",
                CoreError::Ingest(_) => "ingest",
                CoreError::Conditioning(_) => "conditioning",
                CoreError::Dataset(_) => "dataset",
                CoreError::Shape(_) => "shape",
                CoreError::Divergence { .. } => "divergence",
                CoreError::Undefined(_) => "undefined",
                CoreError::Degenerate(_) => "degenerate",
                CoreError::Unsupported(_) => "unsupported",
            },
        }
    }

    /// Process exit code; distinct per category, 0 and 1 reserved.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "io" => 10,
            "bad_magic" => 11,
            "truncated" => 12,
            "unknown_dtype" => 13,
            "format" => 14,
            "config" => 20,
            "missing_input" => 21,
            "validation" => 30,
            "bounds" => 31,
            "alignment" => 32,
            "ingest" => 33,
            "conditioning" => 34,
            "dataset" => 35,
            "shape" => 36,
            "divergence" => 37,
            "undefined" => 38,
            "degenerate" => 39,
            "unsupported" => 40,
            "check_failed" => 50,
            _ => 1,
        }
    }
}
