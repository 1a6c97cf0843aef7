use thiserror::Error;

/// Errors surfaced by the environment, policy, pool and trainer.
#[derive(Debug, Error)]
pub enum SageError {
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("no tie-free query found after {attempts} attempts")]
    UnsatisfiableScene { attempts: usize },

    #[error("ground-truth tie: {0}")]
    Tie(String),

    #[error("descriptor `{0}` does not resolve to a unique object")]
    BadDescriptor(String),

    #[error("ground truth `{0}` is not among the options")]
    TruthNotInOptions(String),

    #[error("operation `{0}` is not applicable to this input")]
    NotApplicable(String),

    #[error("mapped answer `{0}` is missing from the dual options")]
    UnmappableAnswer(String),

    #[error("no in-domain sample found for `{op}` within {attempts} attempts")]
    EmptyDomain { op: String, attempts: usize },

    #[error("empty probe set for `{0}`")]
    EmptyProbeSet(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown operation id `{0}`")]
    UnknownOp(String),

    #[error("enumeration budget exceeded: {0}")]
    EnumerationBudget(String),

    #[error("overlapping orbits: input {0} belongs to more than one orbit")]
    OverlappingOrbits(usize),

    #[error("{path}:{line}: {reason}")]
    Journal {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SageError>;
