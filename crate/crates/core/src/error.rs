use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} is outside the domain of the rate function")]
    OutOfDomain { t: f64 },

    #[error("invalid scenario: {}", format_violations(.0))]
    InvalidScenario(Vec<Violation>),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("fluid Pi unsupported for ratio != 1 (r12 = {r12}, r21 = {r21})")]
    UnsupportedRatio { r12: f64, r21: f64 },

    #[error(
        "inconsistent FTSP drifts: delta+ = {delta_plus} >= 0 and delta- = {delta_minus} <= 0"
    )]
    InconsistentDrifts { delta_plus: f64, delta_minus: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid step size: {0}")]
    InvalidStep(String),

    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("no convergence after {steps} steps (residual {residual:e})")]
    NonConvergence { steps: usize, residual: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}
