use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site index {site} out of range for a {len}-site system")]
    SiteOutOfRange { site: usize, len: usize },

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("pair projectors need two distinct electron sites, got {0} and {1}")]
    InvalidPair(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("expectation value has imaginary residue {0:e}")]
    ComplexExpectation(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("step control failure at t = {time:e} s: required step {step:e} s below minimum {min_step:e} s")]
    StepControl { time: f64, step: f64, min_step: f64 },

    #[error("step-halving self-check failed: final states differ by {0:e}")]
    SelfCheck(f64),

    #[error("steady-state generator is singular or ill-conditioned: {0}")]
    SingularGenerator(String),

    #[error("ensemble tensor grid has {0} members (limit 1000000)")]
    EnsembleOverflow(u128),

    #[error("series on mismatched grids: {0}")]
    GridMismatch(String),

    #[error("time {t:e} s outside trace span [{start:e}, {end:e}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },

    #[error("dissociation must be zero during the readout window (got d = {0})")]
    DissociationInReadout(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}
