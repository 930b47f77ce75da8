use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid identifier {0:?}: must be non-empty and must not contain \"::\"")]
    InvalidIdentifier(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("attribute set is empty")]
    EmptyAttributeSet,

    #[error("target set is empty")]
    EmptyTargetSet,

    #[error("degenerate variance: all per-target associations are identical (stddev {stddev:e})")]
    DegenerateVariance { stddev: f64 },

    #[error("internal consistency error: {0}")]
    InternalConsistency(String),

    #[error("invalid bias test: {0}")]
    InvalidTest(String),

    #[error("missing embeddings for {} key(s): {}", .0.len(), .0.join(", "))]
    MissingEmbedding(Vec<String>),

    #[error("category mismatch at {path}: image {image_id:?} has category {found}, expected {expected}")]
    CategoryMismatch {
        path: String,
        image_id: String,
        expected: String,
        found: String,
    },

    #[error("invalid permutation plan: {0}")]
    InvalidPlan(String),

    #[error("partition count C({n}, {k}) overflows 64 bits")]
    Overflow { n: u64, k: u64 },

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported store format version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt record at byte offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },

    #[error("store invariant violated ({reason}) for key(s): {}", .keys.join(", "))]
    InvariantViolation { keys: Vec<String>, reason: String },

    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },

    #[error("dangling reference at {path}: image {image_id:?} is not in the manifest")]
    DanglingReference { path: String, image_id: String },

    #[error("unbalanced spec {test}: {summary}")]
    Unbalanced { test: String, summary: String },

    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for data problems, 3 for
    /// internal-consistency failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InternalConsistency(_) => 3,
            _ => 2,
        }
    }
}
