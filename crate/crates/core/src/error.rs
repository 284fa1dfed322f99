use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} too small: need at least {required}")]
    DimensionTooSmall { dim: usize, required: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector ({context})")]
    ZeroNorm { context: &'static str },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("infeasible split: {base} base classes for {clients} clients")]
    InfeasibleSplit { base: usize, clients: usize },

    #[error("class {class} is not assigned to client {client}")]
    ClassNotAssigned { class: usize, client: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset for client {client}")]
    EmptyDataset { client: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("selection size {s} out of range 1..={groups}")]
    SelectionSize { s: usize, groups: usize },

    #[error("empty client set")]
    EmptyClientSet,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inconsistent selection: {0}")]
    InconsistentSelection(String),

    #[error("arity mismatch: {0}")]
    Arity(String),

    #[error("{groups} groups exceeds the exact enumeration bound of {limit}; use the Monte Carlo estimate")]
    GroupsTooLarge { groups: usize, limit: usize },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("all slots are zero")]
    AllSlotsZero,

    #[error("all evaluation sets are empty")]
    EmptyEvaluation,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("invalid config: {0}")]
    Validation(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
