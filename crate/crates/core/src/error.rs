use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Sherman-Morrison denominator for column {column} is {denominator:e}")]
    SingularCorrection { column: usize, denominator: f64 },

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("initial estimate is all zero, so every entry is excluded")]
    EmptyInitializer,

    #[error("infeasible simulation spec: {0}")]
    InfeasibleSpec(String),

    #[error("subpopulation {subpopulation} has no true {missing}")]
    DegenerateTruth {
        subpopulation: usize,
        missing: &'static str,
    },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
}

impl Error {
    /// Stable snake_case identifier, suitable for machine-readable reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ZeroVarianceColumn(_) => "zero_variance_column",
            Error::Dimension(_) => "dimension_error",
            Error::Numerical(_) => "numerical_error",
            Error::SingularCorrection { .. } => "singular_correction",
            Error::NotConverged { .. } => "not_converged",
            Error::InvalidWeights(_) => "invalid_weights",
            Error::EmptyInitializer => "empty_initializer",
            Error::InfeasibleSpec(_) => "infeasible_spec",
            Error::DegenerateTruth { .. } => "degenerate_truth",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::NonFiniteInput(_) => "non_finite_input",
        }
    }
}
