use std::path::Path;

use loanrate_core::beliefs::BeliefError;
use loanrate_core::data::DataError;
use loanrate_core::mixture::MixtureError;
use loanrate_core::panel::PanelError;
use loanrate_core::pricing::PricingError;
use loanrate_core::statics::StaticsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, config or flags. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// A solver or estimator failed on valid input. Exit code 2.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<BeliefError> for CliError {
    fn from(e: BeliefError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PricingError> for CliError {
    fn from(e: PricingError) -> Self {
        match e {
            PricingError::NoSignChange { .. }
            | PricingError::NonConcaveAtRoot { .. }
            | PricingError::NotConverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StaticsError> for CliError {
    fn from(e: StaticsError) -> Self {
        match e {
            StaticsError::Pricing(p) => p.into(),
            StaticsError::OrderPrecondition { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MixtureError> for CliError {
    fn from(e: MixtureError) -> Self {
        match e {
            MixtureError::DegenerateComponent { .. } | MixtureError::SingularDesign { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::SingularDesign | PanelError::NoWithinVariation { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
