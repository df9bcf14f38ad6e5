use std::fmt;

use thiserror::Error;

/// A single scenario validation failure, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a stepper contract, e.g. routed a long delay to the
    /// short-delay path or supplied too little input history.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("gain configuration error: {0}")]
    GainConfig(String),

    /// The Riccati recursion failed to settle; the (Φ, Γ, Q, R) configuration
    /// is likely unstabilizable.
    #[error("gain design did not converge within {0} iterations")]
    DesignDivergence(usize),

    #[error("scenario file error: {0}")]
    ScenarioFile(String),

    #[error("invalid scenario: {}", format_violations(.0))]
    Validation(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
