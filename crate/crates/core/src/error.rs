use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("source {task} has variance {sigma2} not below the target variance {sigma0_2}")]
    VarianceOrderViolation { task: usize, sigma2: f64, sigma0_2: f64 },

    #[error("task {task} has norm {norm} above the bound {c_theta}")]
    NormBoundViolation { task: usize, norm: f64, c_theta: f64 },

    #[error("covariance shape of task {task} is invalid: {reason}")]
    NotPsd { task: usize, reason: String },

    #[error("instance needs at least the target task")]
    EmptyInstance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("task {task} out of range for {tasks} tasks")]
    TaskOutOfRange { task: usize, tasks: usize },

    #[error("budget exceeded: requested {requested} with {drawn} of {budget} already drawn")]
    BudgetExceeded { requested: usize, drawn: usize, budget: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("delta {0} outside (0, 1)")]
    DeltaOutOfRange(f64),

    #[error("kappa {0} below 1")]
    KappaBelowOne(f64),

    #[error("insufficient budget: {0}")]
    InsufficientBudget(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("tau {0} outside (0, 1]")]
    TauOutOfRange(f64),

    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("ordering violated: {0}")]
    OrderingViolation(String),

    #[error("dimension {0} too small, need at least 3")]
    DimensionTooSmall(usize),

    #[error("regime violated: {0}")]
    RegimeViolation(String),

    #[error("mixture with {far} far and {close} close sources exceeds {total} sources")]
    InfeasibleMixture { far: usize, close: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
