use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("Kronecker power must be at least 1 (constant term is excluded)")]
    ZeroPower,

    #[error("no assignment for variable (age {age}, comp {comp})")]
    MissingAssignment { age: usize, comp: usize },

    #[error("missing alpha value for term {0}")]
    MissingAlpha(u32),

    #[error("alpha value {value} for term {id} outside (0, 1]")]
    AlphaRange { id: u32, value: f64 },

    #[error("disturbance history has {got} entries, need {need}")]
    ShortHistory { need: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("Taylor order {0} exceeds the supported maximum of 6")]
    OrderTooHigh(usize),

    #[error("f(x_star) deviates from x_star by {0:e}")]
    NotEquilibrium(f64),

    #[error("controller synthesis exceeded the term cap of {cap}; per-level counts so far: {counts:?}")]
    TermExplosion { cap: usize, counts: Vec<usize> },

    #[error("Riccati iteration did not converge after {iters} iterations (residual {residual:e})")]
    RiccatiDivergence { iters: usize, residual: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
