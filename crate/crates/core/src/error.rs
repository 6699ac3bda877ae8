use thiserror::Error;

use crate::kam::StepDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not elliptic: det = {det:e} (need det > {threshold:e})")]
    NotElliptic { det: f64, threshold: f64 },

    #[error("resonant frequency: k = {witness:?} gives |k·ω| = {value:e}")]
    Resonant { witness: Vec<i32>, value: f64 },

    #[error("lattice budget exceeded: {needed} points needed, budget is {budget}")]
    Budget { needed: u128, budget: u128 },

    #[error("small divisor {divisor:e} below {threshold:e} at k = {witness:?}")]
    SmallDivisor { witness: Vec<i32>, divisor: f64, threshold: f64 },

    #[error("schedule error: {reason}")]
    Schedule { reason: String, max_admissible_eps: Option<f64> },

    #[error("arithmetic condition error: {0}")]
    Condition(String),

    #[error("KAM step {} failed: {}", .0.nu, .0.failed_checks().join("; "))]
    StepFailure(Box<StepDiagnostics>),

    #[error("insufficient resonances: {found} found, {requested} requested")]
    InsufficientResonances { found: usize, requested: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    /// Short machine-readable tag used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Input(_) => "input",
            Error::Precondition(_) => "precondition",
            Error::NotElliptic { .. } => "not_elliptic",
            Error::Resonant { .. } => "resonant",
            Error::Budget { .. } => "budget",
            Error::SmallDivisor { .. } => "small_divisor",
            Error::Schedule { .. } => "schedule",
            Error::Condition(_) => "condition",
            Error::StepFailure(_) => "step_failure",
            Error::InsufficientResonances { .. } => "insufficient_resonances",
            Error::Numerical(_) => "numerical",
            Error::Parse { .. } => "parse",
        }
    }
}
