use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // gridworld
    #[error("action subject {0} is not on the board")]
    MissingSubject(String),
    #[error("cell ({row}, {col}) is already occupied")]
    Occupied { row: usize, col: usize },
    #[error("position ({row}, {col}) is outside the board")]
    OutOfBounds { row: isize, col: isize },
    #[error("object {0} is already on the board")]
    DuplicateObject(String),
    #[error("cannot parse action text {0:?}")]
    ActionParse(String),

    // tokencodec
    #[error("word {0:?} is not in the vocabulary")]
    OutOfVocab(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("token id {0} is not an image token")]
    InvalidTokenId(u32),
    #[error("expected {expected} tokens, got {got}")]
    WrongLength { expected: usize, got: usize },

    // seqmodel
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    // probes
    #[error("the pool holds no action distinct from the original")]
    NoDistinctAction,

    // verify / eval
    #[error("vocabulary hash mismatch: {0} vs {1}")]
    VocabMismatch(String, String),
    #[error("action is infeasible on the source board: {0}")]
    InfeasibleAction(String),

    // experiment orchestration
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("artifact {path} changed since it was recorded (expected {expected}, found {found})")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_) => 2,
            Error::MissingDependency(_) | Error::HashMismatch { .. } => 3,
            Error::NonFiniteLoss { .. } => 4,
            _ => 1,
        }
    }
}
