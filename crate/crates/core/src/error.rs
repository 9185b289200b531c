use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has no nonzero entry")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate id {0} in corpus")]
    DuplicateId(u64),
    #[error("reducer for labeled id {expected} received a match keyed by {found}")]
    KeyViolation { expected: u64, found: u64 },
    #[error("no label vector for labeled id {0}")]
    MissingLabels(u64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("loss gradient has a non-finite coordinate")]
    NonFiniteGradient,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("average precision undefined: no positives")]
    UndefinedAp,
    #[error("{method} failed on seed {seed}: {source}")]
    Benchmark {
        seed: u64,
        method: String,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed corpus at {location}: {reason}")]
    Format { location: String, reason: String },
    #[error("refusing to overwrite existing run record {0} (pass --force)")]
    RecordExists(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
