use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid channel name {0:?}")]
    InvalidName(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("value not representable: {0}")]
    BadValue(&'static str),
    #[error("fractional tune {0} is on an integer or half-integer resonance")]
    DegenerateTune(f64),
    #[error("invalid ring configuration: {0}")]
    BadConfig(&'static str),
    #[error("injection of {0} mA is negative")]
    NegativeInjection(f64),
    #[error("top-up threshold {threshold} mA must be below refill level {refill_to} mA")]
    BadThreshold { threshold: f64, refill_to: f64 },
    #[error("insufficient data: need {needed} samples, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("non-positive current in sample window")]
    NonPositiveCurrent,
    #[error("sample timestamps must be strictly increasing")]
    NonMonotonicTime,
    #[error("least-squares fit is singular")]
    SingularFit,
    #[error("{0} matrix is rank deficient")]
    RankDeficient(&'static str),
    #[error("invalid adjustment parameters: {0}")]
    BadParams(&'static str),
    #[error("SVD did not converge after {0} sweeps")]
    ConvergenceFailure(usize),
    #[error("every singular value is disabled")]
    AllDisabled,
    #[error("singular value mask has length {got}, expected {expected}")]
    BadMask { expected: usize, got: usize },
    #[error("state transition not allowed: {0}")]
    BadTransition(&'static str),
}
