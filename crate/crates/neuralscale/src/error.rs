use thiserror::Error;

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad user input at the interface level (unknown flag, malformed file).
    Usage,
    /// Input violates a documented precondition of an operation.
    Domain,
    /// The computation itself failed (singular system, divergence, no bracket).
    Numerical,
    /// Filesystem or OS failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("width vector has {got} entries, architecture expects {expected}")]
    WidthLengthMismatch { expected: usize, got: usize },

    #[error("width at prunable layer {layer} is {value}, must be >= 1")]
    InvalidWidth { layer: usize, value: i64 },

    #[error("operation not defined for the {family} family: {op}")]
    UnsupportedFamily { family: &'static str, op: &'static str },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("dataset split is empty")]
    EmptyDataset,

    #[error("training diverged (non-finite loss) at step {step}")]
    TrainingDiverged { step: usize },

    #[error("need at least 2 trajectory records to fit, got {n}")]
    InsufficientData { n: usize },

    #[error("singular design: fewer than 2 distinct parameter totals in the trajectory")]
    SingularDesign,

    #[error("could not bracket the target budget: {0}")]
    NoBracket(String),

    #[error("budget {target} is below the minimum achievable count {minimum}")]
    InfeasibleBudget { target: u64, minimum: u64 },

    #[error("non-finite value in {0}; try a smaller step size")]
    NonFinite(String),

    #[error("trajectory never satisfied the recording condition; no records collected")]
    EmptyTrajectory,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema mismatch: expected {expected}, file declares {got}")]
    SchemaMismatch { expected: String, got: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            WidthLengthMismatch { .. }
            | InvalidWidth { .. }
            | UnsupportedFamily { .. }
            | InvalidArch(_)
            | InvalidArgument(_)
            | EmptyDataset
            | InsufficientData { .. }
            | InfeasibleBudget { .. }
            | EmptyTrajectory => ErrorClass::Domain,
            TrainingDiverged { .. } | SingularDesign | NoBracket(_) | NonFinite(_) => {
                ErrorClass::Numerical
            }
            Parse { .. } | SchemaMismatch { .. } | Json(_) => ErrorClass::Usage,
            Io(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
