//! Config-driven runner for the `stochint` experiments and audits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod overlay;
pub mod run;

pub use config::ExperimentConfig;
pub use overlay::{overlay_bounds, BoundSpec, OverlayRow};
pub use run::{execute, write_outputs, OutputFormat, RunOutput, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or unreadable configuration; exit code 2.
    #[error("{0}")]
    Validation(String),
    /// A numerical self-check failed; exit code 3.
    #[error("numerical check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn field(name: &str, reason: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("invalid config field `{name}`: {reason}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Check(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<stochint::Error> for CliError {
    fn from(e: stochint::Error) -> Self {
        match e {
            stochint::Error::ResidualTooLarge { .. } => CliError::Check(e.to_string()),
            other => CliError::Validation(format!("invalid configuration: {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::field("n", "bad").exit_code(), 2);
        assert_eq!(CliError::Check("x".into()).exit_code(), 3);
        assert_eq!(CliError::Io("x".into()).exit_code(), 1);
        let residual = stochint::Error::ResidualTooLarge {
            residual: 1e-3,
            tolerance: 1e-8,
        };
        assert_eq!(CliError::from(residual).exit_code(), 3);
        assert_eq!(CliError::from(stochint::Error::NotApplicable).exit_code(), 2);
    }
}
