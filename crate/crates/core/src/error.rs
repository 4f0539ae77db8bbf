use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A gradient or loss went NaN/Inf during optimization.
    #[error("training diverged: non-finite gradient in parameter `{0}`")]
    Divergence(String),

    /// The query has no characters or tokens left after normalization; callers skip it.
    #[error("query `{0}` is empty after normalization")]
    SkipQuery(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{what} out of range: {value} (allowed {allowed})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        allowed: String,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-parseable code printed by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIMENSION",
            Error::EmptyInput(_) => "E_EMPTY",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::Divergence(_) => "E_DIVERGED",
            Error::SkipQuery(_) => "E_SKIP_QUERY",
            Error::Parse { .. } => "E_PARSE",
            Error::Config(_) => "E_CONFIG",
            Error::Usage(_) => "E_USAGE",
            Error::OutOfRange { .. } => "E_RANGE",
            Error::LengthMismatch(..) => "E_LENGTH",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}

pub(crate) fn dim_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Dimension(format!("{what}: expected {expected}, got {got}"))
}
