use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid generating triplet: {0}")]
    InvalidTriplet(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: residual estimate {residual:e}")]
    Quadrature { lo: f64, hi: f64, residual: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integrand is not bounded on [0, {horizon}]")]
    UnboundedIntegrand { horizon: f64 },

    #[error("matrix exponential overflow: |tA|_1 = {norm:e}")]
    ExpOverflow { norm: f64 },

    #[error("picard iteration failed to contract after {iterations} iterations (last residual {last:e})")]
    NonContraction { iterations: usize, last: f64, history: Vec<f64> },

    #[error("time {time} outside [{lo}, {hi}]")]
    TimeRange { time: f64, lo: f64, hi: f64 },

    #[error("theta-moment of the Levy measure is infinite for theta = {theta}")]
    InfiniteMoment { theta: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
