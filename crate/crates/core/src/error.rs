use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("{name} = {value} outside of domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter regime error: {0}")]
    Regime(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("solver failure: {message}")]
    Solver { message: String, trace: Vec<String> },

    #[error("no feasible envelope: {0}")]
    Infeasible(String),

    #[error("wall-clock budget of {budget} s exceeded after {elapsed:.1} s")]
    Budget { elapsed: f64, budget: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(name: &'static str, value: f64, domain: impl Into<String>) -> Error {
    Error::Domain {
        name,
        value,
        domain: domain.into(),
    }
}
