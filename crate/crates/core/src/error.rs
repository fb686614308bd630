use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the core can report. Variants map one-to-one onto the
/// exit codes of the command line front end.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence { epoch: usize, step: usize, detail: String },
    #[error("undefined result: {0}")]
    Undefined(String),
    #[error("degenerate map: {0}")]
    Degenerate(String),
    #[error("unsupported variant: {0}")]
    Unsupported(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
