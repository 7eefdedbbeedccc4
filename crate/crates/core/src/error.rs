use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid ground truth: {0}")]
    InvalidGroundTruth(String),

    #[error("invalid decay spec `{spec}`: {reason}")]
    InvalidDecay { spec: String, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate box (zero width or height) cannot be encoded")]
    DegenerateBox,

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("no ground truth falls in the evaluation subset")]
    NoGroundTruth,

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("no positive samples under the assignment config")]
    NoPositives,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("malformed JSON on line {line}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
