use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library. Each variant maps onto one of the three
/// CLI failure classes through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("referential integrity: unknown instance id `{0}`")]
    UnknownInstance(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty representation for instance `{0}`")]
    EmptyRepresentation(String),

    #[error("degenerate SIF fit: {0}")]
    DegenerateSif(String),

    #[error("no scorable candidates for instance `{0}`")]
    NoScorableCandidates(String),

    #[error("nothing to evaluate")]
    NothingToEvaluate,

    #[error("empty schema")]
    EmptySchema,

    #[error("feature `{feature}` is masked for pair `{pair_id}` and no backoff model is available")]
    MaskedFeature { pair_id: String, feature: String },

    #[error("feature `{0}` is not present in the feature matrix")]
    UnknownFeature(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("splits overlap on pair `{0}`")]
    SplitOverlap(String),

    #[error("missing gold for pairs: {}", .0.join(", "))]
    MissingGold(Vec<String>),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of what was being processed.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any [`Error::Context`] layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// 2 for data errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::DegenerateSif(_) | Error::RankDeficient(_) => 3,
            _ => 2,
        }
    }
}
