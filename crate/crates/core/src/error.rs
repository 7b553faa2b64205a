use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("channel rate {name} = {value} is negative (gamma={gamma}, T={t}, h={h})")]
    RateOutOfRange {
        name: &'static str,
        value: f64,
        gamma: f64,
        t: f64,
        h: f64,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("site ({x}, {y}) lies outside the {ell}x{ell} cluster")]
    SiteOutOfCluster { x: i64, y: i64, ell: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step size {dt:e} fell below the minimum {dt_min:e} at t = {t}")]
    StepUnderflow { t: f64, dt: f64, dt_min: f64 },
    #[error("superoperator dimension {requested} exceeds the cap {cap}")]
    CapExceeded { requested: usize, cap: usize },
    #[error("derived rate {value:e} of boundary coupling {coupling} is negative")]
    NegativeRate { coupling: usize, value: f64 },
    #[error("boundary fit needs at least {needed} points, found {found}")]
    InsufficientBoundary { needed: usize, found: usize },
    #[error("island of size {ell_down} is not commensurate with clusters of size {ell} on an {lattice} lattice")]
    IncommensurateIsland {
        ell_down: usize,
        ell: usize,
        lattice: usize,
    },
    #[error("trajectory did not converge")]
    NotConverged,
    #[error("only {linear} points in the linear regime, need {needed}")]
    NonLinearRegime { linear: usize, needed: usize },
    #[error("linear fit residual {residual:e} exceeds {threshold:e}")]
    WindowTooWide { residual: f64, threshold: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
