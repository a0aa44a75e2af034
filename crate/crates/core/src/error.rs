use thiserror::Error;

use crate::simulate::BackboneForest;

/// Errors raised by the mechanism algebra, the solvers and the simulators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("type index {index} out of range for a {ell}-type mechanism")]
    IndexOutOfRange { index: usize, ell: usize },

    #[error("coordinate {index} of {what} is negative or not finite: {value}")]
    NegativeCoordinate {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("effective drift matrix is reducible; Perron-Frobenius data requires irreducibility")]
    Reducible,

    #[error("leading eigenpair could not be resolved: {0}")]
    Eigen(String),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("solution blew up (component above 1e12) at t = {time}")]
    BlowUp { time: f64 },

    #[error("backbone undefined: Γ ≤ 0 (Γ = {gamma})")]
    NotSupercritical { gamma: f64 },

    #[error("extinction root did not converge within t = {t}; last iterate {last:?}")]
    ExtinctionNotConverged { t: f64, last: Vec<f64> },

    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("upper bound on w unavailable: min β_i = 0")]
    BoundUnavailable,

    #[error("branch rate q_{index} = {value} is not positive")]
    NonPositiveBranchRate { index: usize, value: f64 },

    #[error("point {0:?} lies outside the unit cube")]
    OutsideUnitCube(Vec<f64>),

    #[error("e^(-U) left [0,1] at t = {time}: value {value}")]
    LeftUnitInterval { time: f64, value: f64 },

    #[error("all offspring mixture weights vanish for type {0}")]
    ZeroMixture(usize),

    #[error("backbone population exceeded {limit} particles at t = {time}")]
    PopulationExplosion {
        limit: usize,
        time: f64,
        partial: Box<BackboneForest>,
    },

    #[error("mechanism JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
