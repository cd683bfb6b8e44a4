use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("position ({x}, {y}) lies outside the grid")]
    OutsideGrid { x: f64, y: f64 },

    #[error("phantom outline does not fit: {0}")]
    OutlineTooLarge(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("relative residual undefined for a zero source")]
    ZeroSource,

    #[error("zero-norm reference field")]
    ZeroReference,

    #[error("zero dynamic range in reference image")]
    ZeroDynamicRange,

    #[error(
        "solver did not converge for source {source_index} at frequency index {frequency_index} \
         (update {final_update:.3e} after {iterations} iterations)"
    )]
    NotConverged {
        source_index: usize,
        frequency_index: usize,
        iterations: usize,
        final_update: f64,
    },

    #[error("bad magic bytes {0:?}, expected \"OBUS\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("unexpected end of data")]
    Truncated,

    #[error("unknown record kind {0}")]
    UnknownKind(u8),

    #[error("expected a {expected} record, found {found}")]
    WrongKind { expected: &'static str, found: &'static str },

    #[error("unknown element type {0}")]
    UnknownDtype(u8),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
