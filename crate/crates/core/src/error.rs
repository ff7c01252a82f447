use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autoencoder::TrainHistory;

/// Errors raised by the core routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid is disconnected; isolated buses: {0:?}")]
    Disconnected(Vec<usize>),

    #[error("nonpositive reactance {reactance} on branch {branch}")]
    NonpositiveReactance { branch: usize, reactance: f64 },

    #[error("invalid measurement configuration: {0}")]
    InvalidMeasurement(String),

    #[error("unobservable configuration: H has rank {rank}, need {needed}")]
    Unobservable { rank: usize, needed: usize },

    #[error("reduced susceptance matrix is singular")]
    SingularSusceptance,

    #[error("singular normal equations")]
    SingularNormalEquations,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("attack is infeasible under the given constraints")]
    Infeasible,

    #[error("no stealthy attack with support of at most {0} measurements")]
    NotFound(usize),

    #[error("node or time limit reached before any feasible attack was found")]
    LimitReached,

    #[error("invalid layer spec: {0}")]
    InvalidLayers(String),

    #[error("training diverged after {} finite epochs", .0.len())]
    Diverged(Box<TrainHistory>),

    #[error("scaler has not been fitted")]
    ScalerUnset,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("LP solver failed: {0}")]
    Lp(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
