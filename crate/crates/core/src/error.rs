use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event at t={event_time:.3}s is older than buffered t={newest:.3}s beyond the reorder tolerance")]
    OutOfOrderEvent { event_time: f64, newest: f64 },

    #[error("event for performer {event:?} offered to window of {window:?}")]
    IdentityMismatch { window: String, event: String },

    #[error("touch event out of bounds: {0}")]
    InvalidEvent(String),

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("cannot stratify into {folds} folds: class {class} has only {count} examples")]
    StratificationImpossible {
        folds: usize,
        class: String,
        count: usize,
    },

    #[error("malformed model: {0}")]
    MalformedModel(String),

    #[error("transition matrix has no mass")]
    ZeroMatrix,

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("malformed packet: {0}")]
    MalformedPacket(String),

    #[error("malformed log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },

    #[error("unknown gesture {0:?}")]
    UnknownGesture(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
