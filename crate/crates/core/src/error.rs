use thiserror::Error;

/// Errors shared by the simulation and statistics modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown field catalog name `{0}`")]
    UnknownCatalog(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("diffusion matrix is rank-deficient")]
    RankDeficientDiffusion,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("step size must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("mass parameter must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("explicit Euler scheme requires dt <= mu/10 (dt = {dt}, mu = {mu})")]
    StiffStep { dt: f64, mu: f64 },
    #[error("initial state violates (q1)^2 + (p1)^2 > 0")]
    DegenerateInit,
    #[error("initial position must satisfy q1 >= 0, got {0}")]
    OutsideDomain(f64),
    #[error("more than {limit} reflection events on one path, aborting (dt too coarse or runaway dynamics)")]
    EventStorm { limit: u64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains non-finite values")]
    NonFiniteSample,
    #[error("sample sizes must match: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("path {index} failed: {source}")]
    Path {
        index: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
