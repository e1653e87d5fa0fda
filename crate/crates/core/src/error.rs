//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rank deficient: input data does not span {wanted} dimensions")]
    RankDeficient { wanted: usize },
    #[error("degenerate weights: all particle weights are zero")]
    DegenerateWeights,
    #[error("unnormalized weights: sum is {sum}, expected 1")]
    UnnormalizedWeights { sum: f64 },
    #[error("degenerate labels: class {class} has no samples")]
    DegenerateLabels { class: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing model: {0}")]
    MissingModel(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
