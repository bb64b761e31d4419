use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("B not power of two (got {0} bins)")]
    NotPowerOfTwo(usize),

    #[error("negative count {value} at sample {sample}, bin {bin}")]
    NegativeCount { sample: usize, bin: usize, value: i64 },

    #[error("constant covariate: no contrast between samples")]
    ConstantCovariate,

    #[error("invalid library size {0}: must be strictly positive")]
    InvalidLibrarySize(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shift {shift} out of range for {bins} bins")]
    ShiftOutOfRange { shift: usize, bins: usize },

    #[error("empty null reference")]
    EmptyNull,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the error class: 2 for data problems, 3 for
    /// numeric failures. Usage errors (1) are raised by the CLI layer.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
