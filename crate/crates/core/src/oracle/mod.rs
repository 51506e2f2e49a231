//! Exact desk-scale ground truth: brute-force point counting and numerical
//! quadrature of the counting integrals.

pub mod enumerate;
pub mod integrand;
pub mod quadrature;

pub use enumerate::{
    count_binary_exact, count_binary_fold, count_integer_exact, count_integer_fold, CountResult,
    DEFAULT_BUDGET,
};
pub use integrand::IntegrandContext;
pub use quadrature::{quadrature_count, verify_integral_representation, IntegralCheckReport};

use thiserror::Error;

use crate::maxent::SolveError;
use crate::polytope::ValidationError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("margin {index} of direction {direction} is {value}; exact counting needs integers")]
    NonIntegerMargins { direction: usize, index: usize, value: f64 },
    #[error("enumeration budget exceeded: visited {nodes} nodes against a budget of {budget}")]
    BudgetExceeded { budget: u64, nodes: u64 },
    #[error("integer-mode integrand factor vanished at cell {cell}")]
    PoleEncountered { cell: usize },
    #[error("quadrature refinements disagree: {fine} vs {coarse} (gap {gap})")]
    QuadratureNotConverged { fine: f64, coarse: f64, gap: f64 },
    #[error("tensor-grid quadrature limited to dim L <= {max}, got {dim_l}")]
    QuadratureDimTooLarge { dim_l: usize, max: usize },
    #[error("point outside the expansion radius: ||t||_inf = {norm} > {radius}")]
    OutOfExpansionRadius { norm: f64, radius: f64 },
}

impl OracleError {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            OracleError::Validation(e) => e.kind(),
            OracleError::Solve(e) => e.kind(),
            OracleError::NonIntegerMargins { .. } => "NonIntegerMargins",
            OracleError::BudgetExceeded { .. } => "BudgetExceeded",
            OracleError::PoleEncountered { .. } => "PoleEncountered",
            OracleError::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            OracleError::QuadratureDimTooLarge { .. } => "QuadratureDimTooLarge",
            OracleError::OutOfExpansionRadius { .. } => "OutOfExpansionRadius",
        }
    }
}
