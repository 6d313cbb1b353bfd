use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unparseable input: {0}")]
    Parse(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-positive price {price} at timestamp {timestamp}")]
    NonPositivePrice { timestamp: i64, price: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("zero variance in input returns")]
    ZeroVariance,
    #[error("degenerate variance: squared series is constant")]
    DegenerateVariance,
    #[error("misaligned series: {0}")]
    Misaligned(String),
    #[error("no distinct candidates: {0}")]
    NoCandidates(String),
    #[error("matrix is not stochastic: {0}")]
    NotStochastic(String),
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("state space too large for exact computation ({states} window states, limit {limit}); use the Monte Carlo estimator")]
    StateSpaceTooLarge { states: u128, limit: u128 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
