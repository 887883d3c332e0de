use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes used by the command-line front end.
pub mod exit_code {
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PROVIDER: i32 = 3;
    pub const VALIDATION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    // dataset / ingest
    #[error("duplicate entity_id `{0}`")]
    DuplicateEntityId(String),
    #[error("record `{0}` has no outcome label")]
    MissingOutcome(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("parse error: {0}")]
    Parse(ParseError),
    #[error("input file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("insufficient records: {0}")]
    InsufficientRecords(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("entity_id `{0}` is not part of the dataset")]
    UnknownEntityId(String),
    #[error("feature_id `{0}` is not part of the feature set")]
    UnknownFeatureId(String),
    #[error("expected a {expected} dataset, got {actual}")]
    WrongRole { expected: String, actual: String },

    // backend
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider rejected request with status {status}: {body}")]
    ProviderRejection { status: u16, body: String },
    #[error("no cassette entry for request `{request_id}` (key {key})")]
    ReplayMiss { request_id: String, key: String },
    #[error("unknown response schema `{0}`")]
    UnknownSchema(String),
    #[error("provider configuration: {0}")]
    ProviderConfig(String),

    // agents
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("subgoal violation: {0}")]
    SubgoalViolation(String),
    #[error("merge decision references unknown feature `{0}`")]
    UnknownMemberId(String),
    #[error("feature `{0}` appears in more than one merge group")]
    OverlappingMergeGroups(String),

    // metrics
    #[error("feature `{0}` has zero support")]
    ZeroSupport(String),
    #[error("feature `{0}` covers the whole population")]
    FullSupport(String),
    #[error("counts n1={n1}, n0={n0} exceed population N1={big_n1}, N0={big_n0}")]
    CountsExceedPopulation { n1: u64, n0: u64, big_n1: u64, big_n0: u64 },
    #[error("empty input")]
    EmptyInput,
    #[error("division by zero: {0}")]
    DivisionByZero(String),

    // evaluation / synth
    #[error("cannot freeze an empty feature set")]
    EmptyFeatureSet,
    #[error("leakage detected: {0} held-out id occurrence(s) in discovery payloads")]
    LeakageDetected(usize),
    #[error("freeze checksum mismatch: expected {expected}, found {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("infeasible plant plan: {0}")]
    InfeasiblePlan(String),
    #[error("trigger token `{0}` is used by more than one planted feature")]
    DuplicateTrigger(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line number, `None` for whole-file problems.
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse(ParseError {
            line,
            message: message.into(),
        })
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Stable machine-readable code for the error kind.
    pub fn code(&self) -> &'static str {
        match self.root() {
            Error::DuplicateEntityId(_) => "DUPLICATE_ENTITY_ID",
            Error::MissingOutcome(_) => "MISSING_OUTCOME",
            Error::EmptyDataset => "EMPTY_DATASET",
            Error::Parse(_) => "PARSE_ERROR",
            Error::MissingFile(_) => "MISSING_FILE",
            Error::InsufficientRecords(_) => "INSUFFICIENT_RECORDS",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::UnknownEntityId(_) => "UNKNOWN_ENTITY_ID",
            Error::UnknownFeatureId(_) => "UNKNOWN_FEATURE_ID",
            Error::WrongRole { .. } => "WRONG_ROLE",
            Error::Transport { .. } => "TRANSPORT_ERROR",
            Error::ProviderRejection { .. } => "PROVIDER_REJECTION",
            Error::ReplayMiss { .. } => "REPLAY_MISS",
            Error::UnknownSchema(_) => "UNKNOWN_SCHEMA",
            Error::ProviderConfig(_) => "PROVIDER_CONFIG",
            Error::SchemaViolation(_) => "SCHEMA_VIOLATION",
            Error::SubgoalViolation(_) => "SUBGOAL_VIOLATION",
            Error::UnknownMemberId(_) => "UNKNOWN_MEMBER_ID",
            Error::OverlappingMergeGroups(_) => "OVERLAPPING_MERGE_GROUPS",
            Error::ZeroSupport(_) => "ZERO_SUPPORT",
            Error::FullSupport(_) => "FULL_SUPPORT",
            Error::CountsExceedPopulation { .. } => "COUNTS_EXCEED_POPULATION",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::DivisionByZero(_) => "DIVISION_BY_ZERO",
            Error::EmptyFeatureSet => "EMPTY_FEATURE_SET",
            Error::LeakageDetected(_) => "LEAKAGE_DETECTED",
            Error::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            Error::InfeasiblePlan(_) => "INFEASIBLE_PLAN",
            Error::DuplicateTrigger(_) => "DUPLICATE_TRIGGER",
            Error::Stage { .. } => unreachable!("root() strips stage tags"),
            Error::Io { .. } => "IO_ERROR",
            Error::Json(_) => "JSON_ERROR",
            Error::Csv(_) => "CSV_ERROR",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::MissingFile(_)
            | Error::InvalidArgument(_)
            | Error::ProviderConfig(_)
            | Error::Parse(_)
            | Error::Json(_)
            | Error::Csv(_) => exit_code::USAGE,
            Error::Transport { .. }
            | Error::ProviderRejection { .. }
            | Error::ReplayMiss { .. }
            | Error::UnknownSchema(_) => exit_code::PROVIDER,
            Error::Io { .. } => exit_code::FAILURE,
            _ => exit_code::VALIDATION,
        }
    }
}
