use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative token count {0}")]
    NegativeTokens(i64),

    #[error("candidate `{0}` already exists")]
    DuplicateId(String),

    #[error("unknown candidate `{0}`")]
    UnknownId(String),

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("empty batch")]
    EmptyBatch,

    #[error("need at least 2 domains, found {0}")]
    TooFewDomains(usize),

    #[error("no active candidates")]
    NoActiveCandidates,

    #[error("feedback net has {net} outputs but {active} candidates are active")]
    WidthMismatch { net: usize, active: usize },

    #[error("index {index} out of range for {len} outputs")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("query `{query}` has no ground truth for candidate `{llm_id}`")]
    MissingGroundTruth { query: String, llm_id: String },

    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },

    #[error("line {line}: range error: {msg}")]
    Range { line: usize, msg: String },

    #[error("out-of-domain split needs at least 2 labelled domains, found {0}")]
    InsufficientDomains(usize),

    #[error("k = {k} exceeds the {active} active candidates")]
    KTooLarge { k: usize, active: usize },

    #[error("reference candidate `{0}` has no single-LLM point")]
    UnknownReference(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
