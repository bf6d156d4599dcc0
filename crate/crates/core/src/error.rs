use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("lag {max_lag} needs a grid of more than {} points (grid has {grid_size})", 2 * max_lag)]
    Resolution { max_lag: usize, grid_size: usize },

    #[error("{name} = {value} outside valid interval [{min}, {max}]")]
    Domain {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical degeneracy at order {order}: reflection coefficient {reflection}")]
    NumericalDegeneracy { order: usize, reflection: f64 },

    #[error("singular channel: |C(f)| = {magnitude:e} at f = {frequency}")]
    SingularChannel { frequency: f64, magnitude: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("signal of length {len} too short (need more than {needed})")]
    SignalTooShort { len: usize, needed: usize },

    #[error("degenerate variance: sequence is constant")]
    DegenerateVariance,

    #[error("simulation traces were not recorded")]
    TracesAbsent,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
