use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(String, String),
    #[error("{0} does not divide {1}")]
    NotDivisor(u64, u64),
    #[error("{0} is not a prime dividing the modulus {1}")]
    PrimeNotInModulus(u64, u64),
    #[error("denominator {den} is not invertible modulo {modulus}")]
    NonInvertible { den: String, modulus: u64 },
    #[error("determinant is {0}, expected 1")]
    Determinant(String),
    #[error("cap exceeded: {what} needs {needed}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        needed: u128,
        cap: u128,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("linearly dependent modulo {prime}")]
    Dependent { prime: u64 },
    #[error("construction incomplete: {0}")]
    Construction(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
