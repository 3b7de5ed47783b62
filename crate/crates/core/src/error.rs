use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid model spec: {0}")]
    InvalidModel(String),

    /// A pipeline stage cannot hold its weights and in-flight activations.
    #[error("stage {stage} needs {peak} bytes but the device budget is {budget} bytes")]
    Infeasible {
        stage: usize,
        peak: u64,
        budget: u64,
    },

    #[error("no candidate partition is memory-feasible: {0}")]
    NoFeasibleCandidate(String),

    #[error(
        "dataset has no vision units; use text-only mode (q_vision = 0, vision predicate ignored)"
    )]
    TextOnly,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate sample id `{id}`{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DuplicateId { id: String, line: Option<usize> },

    #[error("unsupported schema version {found} (this build reads version {expected})")]
    SchemaVersion { found: u64, expected: u32 },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, printed by the CLI and mapped to
    /// status codes by the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::InvalidModel(_) => "invalid_model",
            Error::Infeasible { .. } => "infeasible_plan",
            Error::NoFeasibleCandidate(_) => "no_feasible_candidate",
            Error::TextOnly => "text_only_dataset",
            Error::Parse { .. } => "parse_error",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Unknown { .. } => "unknown_name",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
