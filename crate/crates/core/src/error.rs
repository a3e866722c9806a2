use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its domain. `field` names the offending input,
    /// e.g. `clients[1].p`.
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("invalid schedule decision: {0}")]
    InvalidDecision(String),

    #[error("delivery outcome is not a subset of the active set: {0}")]
    InvalidOutcome(String),

    #[error("state/action budget exceeded: instance needs {required} state-action pairs, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: u64, residual: f64 },

    #[error(
        "no sign change for the optimal action at state {state} in subsidy bracket [{lo}, {hi}]"
    )]
    NoBracket { state: u32, lo: f64, hi: f64 },

    #[error("threshold search did not terminate below T = {t_max}")]
    ThresholdCutoff { t_max: u32 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
