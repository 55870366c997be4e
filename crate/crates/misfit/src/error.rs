//! One error type for the whole pipeline.
//!
//! Variants are grouped by the stage that raises them; several are reused
//! across stages (e.g. [`Error::GridMismatch`]). The experiment runner maps
//! variants to short tags when a replication fails, and the CLI maps them to
//! exit codes, so variant names are part of the public surface.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- data ingestion -------------------------------------------------
    /// A CSV row failed to parse (wrong arity, non-numeric field, NaN, ...).
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    /// A subject's rows disagree on the outcome value.
    #[error("subject {id}: outcome differs between rows ({a} vs {b})")]
    InconsistentOutcome { id: String, a: f64, b: f64 },

    /// An observation time lies outside [0, 1].
    #[error("subject {id}: time {t} outside [0, 1]")]
    TimeOutOfRange { id: String, t: f64 },

    /// A subject has two observations at the same time point.
    #[error("subject {id}: duplicate observation time {t}")]
    DuplicateTime { id: String, t: f64 },

    /// A grid is unusable: too short, non-increasing, or outside [0, 1].
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two grid-indexed objects were combined but live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A dataset (or score matrix) has no usable content.
    #[error("empty input: {0}")]
    Empty(String),

    /// A binary outcome vector contains only one class.
    #[error("degenerate outcome: {0}")]
    DegenerateOutcome(String),

    // --- smoothing / estimation -----------------------------------------
    /// The penalized spline system is singular for every penalty on the ladder.
    #[error("singular spline system: {0}")]
    SingularFit(String),

    /// Too few off-diagonal residual pairs to smooth a covariance surface.
    #[error("need at least {needed} off-diagonal pairs, found {found}")]
    InsufficientPairs { needed: usize, found: usize },

    // --- eigenanalysis ---------------------------------------------------
    /// Requested more components than the surface supports.
    #[error("rank deficient: requested {requested} components, only {usable} have eigenvalue above threshold")]
    RankDeficient { requested: usize, usable: usize },

    /// All eigenvalues fell below the truncation threshold.
    #[error("empty spectrum: {0}")]
    EmptySpectrum(String),

    // --- imputation -------------------------------------------------------
    /// The observed-data covariance is numerically singular.
    #[error("ill-conditioned observation covariance for subject {id} (condition {cond:.3e})")]
    IllConditioned { id: String, cond: f64 },

    /// The imputation mode cannot be used with the supplied parameters.
    #[error("unsupported mode: {0}")]
    ModeUnsupported(String),

    // --- regression --------------------------------------------------------
    /// The completed-data design matrix is rank deficient.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// The classes are (quasi-)separated; logistic ML estimates diverge.
    #[error("separation detected after {iterations} iterations")]
    Separation { iterations: usize },

    /// Iterative fitting exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    // --- inference / numerics ----------------------------------------------
    /// An argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A kernel that must be positive semi-definite is not.
    #[error("not positive semi-definite: {0}")]
    NotPSD(String),

    /// Smoothness order not supported by the closed-form kernel family.
    #[error("unsupported smoothness: {0}")]
    UnsupportedSmoothness(String),

    // --- io -------------------------------------------------------------
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used in experiment records (`fail_tag` column).
    pub fn tag(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "MalformedRow",
            Error::InconsistentOutcome { .. } => "InconsistentOutcome",
            Error::TimeOutOfRange { .. } => "TimeOutOfRange",
            Error::DuplicateTime { .. } => "DuplicateTime",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::GridMismatch(_) => "GridMismatch",
            Error::Empty(_) => "Empty",
            Error::DegenerateOutcome(_) => "DegenerateOutcome",
            Error::SingularFit(_) => "SingularFit",
            Error::InsufficientPairs { .. } => "InsufficientPairs",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::EmptySpectrum(_) => "EmptySpectrum",
            Error::IllConditioned { .. } => "IllConditioned",
            Error::ModeUnsupported(_) => "ModeUnsupported",
            Error::SingularDesign(_) => "SingularDesign",
            Error::Separation { .. } => "Separation",
            Error::NotConverged { .. } => "NotConverged",
            Error::InvalidInput(_) => "InvalidInput",
            Error::NotPSD(_) => "NotPSD",
            Error::UnsupportedSmoothness(_) => "UnsupportedSmoothness",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
