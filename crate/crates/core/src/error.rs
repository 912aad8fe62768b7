use thiserror::Error;

use crate::circuit::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {rule}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },

    #[error("circuit failed validation: {}", summarize(.0))]
    InvalidCircuit(Vec<Violation>),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error(
        "newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian: pivot {pivot} is below tolerance")]
    Singular { pivot: usize },

    #[error("at t = {time:e} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("window of {periods} periods is not a whole number of fundamental periods")]
    NonIntegerPeriods { periods: f64 },

    #[error("every sample was excluded by the zero-crossing guard")]
    AllExcluded,

    #[error("missing channel {0}")]
    MissingChannel(String),
}

impl Error {
    /// Strips time annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            other => other,
        }
    }
}

fn summarize(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
