use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("moments undefined: need at least 2 periods, got {periods}")]
    MomentsUndefined { periods: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("portfolio has zero risk")]
    ZeroRisk,
    #[error("correlation undefined: item {item} has zero variance")]
    UndefinedCorrelation { item: usize },
    #[error("insufficient return coverage: {}", missing.join(", "))]
    Coverage { missing: Vec<String> },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("singular normal equations for {what} {index}")]
    Singular { what: &'static str, index: usize },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize, best: Vec<f64> },
    #[error("user {user} needs {needed} candidate items but only {available} are available")]
    InsufficientUniverse { user: usize, needed: usize, available: usize },
    #[error("relabeling threshold undefined: {0}")]
    ThresholdUndefined(String),
    #[error("triple sampling starved for user {user}")]
    SamplingStarvation { user: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures of a numerical routine (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroRisk
                | Error::Singular { .. }
                | Error::Divergence { .. }
                | Error::NonConvergence { .. }
                | Error::ThresholdUndefined(_)
                | Error::SamplingStarvation { .. }
        )
    }
}
