use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("prevalence must lie strictly between 0 and 1, got {0}")]
    Prevalence(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    Domain { name: &'static str, reason: String },

    #[error(
        "infeasible design: C({n_groups}, {k}) < {n}, not enough distinct signatures for every subject"
    )]
    Infeasible { n: usize, n_groups: usize, k: usize },

    #[error("pooled test called with an empty member set")]
    EmptyPool,

    #[error("subject index {index} out of range for population of {n}")]
    SubjectOutOfRange { index: usize, n: usize },

    #[error("expected {expected} group results, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("group id mismatch: {0}")]
    GroupMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
