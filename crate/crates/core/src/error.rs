use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A line of an input file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A site or cluster lookup failed.
    #[error("not found: {0}")]
    NotFound(String),

    /// Duplication was requested for a site paired with itself.
    #[error("invalid pair: site {0} paired with itself")]
    InvalidPair(String),

    /// Cluster distance requested for a cluster that covers every node.
    #[error("distance undefined: cluster contains all {0} nodes")]
    UndefinedDistance(usize),

    /// Fewer than two clusters were supplied for standardization.
    #[error("standardization undefined for {0} cluster(s)")]
    StandardizationUndefined(usize),

    /// A stage needs an artifact that does not exist.
    #[error("missing required input {}", path.display())]
    Dependency { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config error in {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 1 for bad input, 2 for a missing upstream artifact, 3 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::NotFound(_)
            | Error::InvalidPair(_)
            | Error::UndefinedDistance(_)
            | Error::StandardizationUndefined(_)
            | Error::Json { .. }
            | Error::Config { .. } => 1,
            Error::Dependency { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
