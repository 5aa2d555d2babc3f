use thiserror::Error;

use crate::linprog::LpError;

#[derive(Debug, Error)]
pub enum CoopError {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("did not converge after {iterations} iterations: {detail}")]
    NotConverged { iterations: usize, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Lp(#[from] LpError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = CoopError> = std::result::Result<T, E>;
