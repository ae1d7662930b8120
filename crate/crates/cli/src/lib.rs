//! Experiment runner for the hybrid PINN: single runs, `(q, dt, nu)` sweeps,
//! the plain-PINN baseline and stand-alone reference solutions.

pub mod commands;
pub mod config;
pub mod output;

use hpinn_core::hpinn::HpinnError;
use hpinn_core::refsolver::RefError;
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<HpinnError> for CliError {
    fn from(e: HpinnError) -> Self {
        match e {
            HpinnError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<RefError> for CliError {
    fn from(e: RefError) -> Self {
        match e {
            RefError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}
