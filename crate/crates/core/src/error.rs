use thiserror::Error;

/// Errors raised by the numerical engine, the simulator and the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("exponential moment of the lifespan measure diverges at lambda = {lambda}")]
    DivergentMoment { lambda: f64 },

    #[error("root bracketing did not converge: {0}")]
    NonConvergence(String),

    #[error("psi has no negative root: {0}")]
    NoNegativeRoot(String),

    #[error("grid step too coarse: h*b = {step_times_rate} exceeds {limit}")]
    GridTooCoarse { step_times_rate: f64, limit: f64 },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("grid horizon {available} is shorter than the {needed} required for the truncation tolerance")]
    HorizonTooShort { needed: f64, available: f64 },

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("rejection sampler gave up after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },

    #[error("zero standard error with mean {mean} != theory {theory}")]
    ZeroVariance { mean: f64, theory: f64 },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
