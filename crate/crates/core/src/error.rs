use thiserror::Error;

use crate::bvp::BvpError;

pub type Result<T> = std::result::Result<T, HopperError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HopperError {
    #[error("leg length must be positive, got {l}")]
    NonPositiveLegLength { l: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("foot target {x_d} is out of reach for leg length {l}")]
    FootTargetOutOfReach { x_d: f64, l: f64 },

    #[error("flat map is singular: {0}")]
    FlatSingularity(&'static str),

    #[error("input series is empty or too short")]
    EmptySeries,

    #[error("unsupported flat system dimension: {n_outputs} outputs of order {order}")]
    UnsupportedDimension { n_outputs: usize, order: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("liftoff state is not ascending (y_cm_dot = {y_dot})")]
    NonAscendingLiftoff { y_dot: f64 },

    #[error("leg rate boundary values violate the sign convention (touchdown {ldot0} must be < 0, takeoff {ldotf} must be > 0)")]
    SignConventionViolated { ldot0: f64, ldotf: f64 },

    #[error("resolved final time {tf} exceeds the admissible bound {limit}")]
    FinalTimeUnbounded { tf: f64, limit: f64 },

    #[error("time {t} is outside the plan horizon [{t0}, {tf}]")]
    OutOfDomain { t: f64, t0: f64, tf: f64 },

    #[error("state became non-finite")]
    NonFiniteState,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("simulation diverged at t = {t}")]
    SimulationDiverged { t: f64 },

    #[error("planning failed at t = {t} ({event}): {source}")]
    PlanFailure {
        t: f64,
        event: String,
        #[source]
        source: Box<HopperError>,
    },

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Bvp(#[from] BvpError),
}
