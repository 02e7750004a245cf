use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unparsable command: {0}")]
    UnparsableCommand(String),

    #[error("invalid primitive {surface:?}: {reason}")]
    InvalidPrimitive { surface: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown split {0:?}")]
    UnknownSplit(String),

    #[error("cannot resplit an empty heldout set")]
    EmptyHeldout,

    #[error("dev fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),

    #[error("primitive {0:?} already occurs in the source vocabulary")]
    PrimitiveCollision(String),

    #[error("lexicon is empty")]
    EmptyLexicon,

    #[error("tag map required for tagmap word classes")]
    MissingTagMap,

    #[error("no token of the input has a replacement candidate")]
    NoEligibleToken,

    #[error("unknown {side} token {token:?}")]
    UnknownToken { side: &'static str, token: String },

    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),

    #[error("length mismatch: {preds} predictions vs {golds} references")]
    LengthMismatch { preds: usize, golds: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
