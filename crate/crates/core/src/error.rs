use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("arity mismatch: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("variable index {index} out of range for arity {arity}")]
    VariableOutOfRange { index: usize, arity: usize },

    #[error("non-finite value during evaluation ({0})")]
    NonFinite(&'static str),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("boundary projection failed after {0} attempts")]
    ProjectionFailed(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory left the domain at t={t}")]
    LeftDomain { t: f64 },

    #[error("time budget exhausted at t={t} with |G|={slice_grad_norm:e}")]
    TimeBudget { t: f64, slice_grad_norm: f64 },

    #[error("too few usable samples ({got}, need {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("fitted exponent {0} is not below 1 (degenerate critical point?)")]
    DegenerateExponent(f64),

    #[error("no step satisfies the length-bound hypothesis at radius {0}")]
    NoQualifyingStep(f64),

    #[error("perturbation amplitude {b} exceeds injectivity bound {bound}")]
    InjectivityBound { b: f64, bound: f64 },

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("scenario file: {0}")]
    ScenarioFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
