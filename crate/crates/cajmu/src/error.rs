use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("loss must be a scalar, got {0} elements")]
    NonScalarLoss(usize),

    #[error("tensors belong to different graphs")]
    GraphMismatch,

    #[error("unknown parameter path: {0}")]
    UnknownParam(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate box: w={w}, h={h}")]
    DegenerateBox { w: f64, h: f64 },

    #[error("file format error: {0}")]
    Format(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 1,
            Error::MissingPrerequisite(_) => 3,
            Error::Incompatible(_) => 4,
            _ => 2,
        }
    }
}
