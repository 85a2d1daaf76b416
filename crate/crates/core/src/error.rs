use thiserror::Error;

/// Failure reported by an information source evaluator.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SourceError {
    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CloverError {
    #[error("invalid information source {index} (model has {count} sources)")]
    InvalidSource { index: usize, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("ill-conditioned model: samples {first} and {second} are numerically indistinguishable (jitter reached {jitter:e})")]
    IllConditioned {
        first: usize,
        second: usize,
        jitter: f64,
    },

    #[error("degenerate distribution: standard deviation {0} is not positive")]
    DegenerateDistribution(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("source {source_index} failed: {error}")]
    Source {
        source_index: usize,
        #[source]
        error: SourceError,
    },
}

pub type Result<T, E = CloverError> = std::result::Result<T, E>;
