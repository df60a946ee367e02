use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid distribution: {0}")]
    InvalidPmf(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown instance `{0}`")]
    UnknownInstance(String),

    #[error("missing parameter `{param}` for instance `{instance}`")]
    MissingParam {
        instance: &'static str,
        param: &'static str,
    },

    #[error("root finding did not converge after {iterations} iterations (last bracket [{lo:e}, {hi:e}])")]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("integration failed at z = {z}: {reason}")]
    Integration { z: f64, reason: String },

    #[error("truncation budget exceeded: {0}")]
    Budget(String),

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("archive is missing channel {0}")]
    MissingChannel(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
