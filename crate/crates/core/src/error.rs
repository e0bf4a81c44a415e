use thiserror::Error;

use crate::linalg::StochasticViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A cell of the source or target sample whose empirical mass is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyCell {
    /// No source record with `X = x` in domain `domain` (0-based indices).
    SourceTreatment { x: usize, domain: usize },
    /// No target-domain record at all.
    Target,
}

impl std::fmt::Display for EmptyCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmptyCell::SourceTreatment { x, domain } => write!(
                f,
                "no source record with x={} in domain e_{}",
                x + 1,
                domain + 1
            ),
            EmptyCell::Target => write!(f, "no target-domain record"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("not a conditional pmf ({what}): {violation}")]
    Stochastic {
        what: String,
        violation: StochasticViolation,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular system: smallest/largest singular value ratio {ratio:e} is below the rank tolerance")]
    SingularSystem { ratio: f64 },

    #[error("P(W|E,x) has numeric rank {rank} < {rows} rows (condition number {condition_number:e}); the effect is not identified")]
    RankDeficient {
        rank: usize,
        rows: usize,
        condition_number: f64,
    },

    #[error("stratum z={} is rank deficient: {source}", .z + 1)]
    StratumRankDeficient {
        z: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty cell: {0}")]
    EmptyCell(EmptyCell),

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("value {value} lies outside the partition support")]
    OutOfSupport { value: f64 },

    #[error("no candidate partition reaches rank {k_u} (best rank found: {best_rank})")]
    NoValidPartition { k_u: usize, best_rank: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite logit at parameter index {index}")]
    NonFiniteLogit { index: usize },

    #[error("{failed} of {total} bootstrap resamples failed (budget 10%); last failure: {last}")]
    BootstrapFailures {
        failed: usize,
        total: usize,
        last: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
