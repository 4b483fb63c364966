use thiserror::Error;

/// Errors produced by the analytical model, the codec and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("generation size {k} exceeds the configured maximum of {max}")]
    GenerationTooLarge { k: usize, max: usize },

    #[error("{what} did not converge within {rounds} rounds")]
    NonConvergence { what: &'static str, rounds: usize },

    #[error("outside the domain of {what}: {reason}")]
    Domain { what: &'static str, reason: String },

    #[error("codec: {0}")]
    Codec(String),

    #[error("simulation exceeded its horizon of {slots} slots")]
    HorizonExceeded { slots: u64 },

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn domain(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain {
        what,
        reason: reason.into(),
    }
}
