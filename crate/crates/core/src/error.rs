use thiserror::Error;

/// Errors produced across the library.
///
/// Worker, group and column indices carried by variants are 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("unrecoverable erasure pattern: received columns have rank {rank}, need {needed}")]
    UnrecoverableErasure { rank: usize, needed: usize },

    #[error("group {group} is unrecoverable: {received} chunks received, rank {rank}, need rank {needed}")]
    UnrecoverableGroup {
        group: usize,
        received: usize,
        rank: usize,
        needed: usize,
    },

    #[error("least-squares system is inconsistent (relative residual {0:.3e})")]
    InconsistentSystem(f64),

    #[error("kappa {kappa} is inadmissible: must exceed {minimum}")]
    InadmissibleKappa { kappa: f64, minimum: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
