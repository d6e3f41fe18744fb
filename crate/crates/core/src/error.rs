use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Veronese index too large: C({top}, {degree}) overflows usize")]
    Capacity { top: usize, degree: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate linear form: normal equations of the division are singular")]
    DegenerateDivisor,

    #[error("degenerate regressor set: every gradient norm is below {tol}")]
    DegenerateRegressors { tol: f64 },

    #[error("incomplete sample window at k={0}")]
    IncompleteWindow(usize),

    #[error("exponent sum of order {order} exceeds correction table order {max}")]
    CorrectionOrder { order: usize, max: usize },

    #[error("moment matrix mismatch: {0}")]
    Mismatch(String),

    #[error("non-finite entries in moment matrix")]
    NonFinite,

    #[error("noise moment of order {0} is not finite")]
    UnboundedMoment(usize),

    #[error("simulation diverged at k={k} (|y| = {value:e}); check mode stability")]
    Diverged { k: usize, value: f64 },

    #[error("series is constant; autocovariance is degenerate")]
    ConstantSeries,

    #[error("missing data: {0}")]
    Missing(String),

    #[error("exhaustive matching supports at most 6 modes, got {0}")]
    TooManyModes(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
