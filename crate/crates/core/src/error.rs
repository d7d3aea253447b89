use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode of the library. `category()` gives the stable
/// machine-readable tag used by the CLI.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("coefficient evaluation failed at {at:?}: {detail}")]
    EvaluationFailure { at: Vec<f64>, detail: String },

    #[error("assumption `{assumption}` violated at {at:?}: {detail}")]
    AssumptionViolation {
        assumption: String,
        at: Vec<f64>,
        detail: String,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("parameter `{name}` out of range: {detail}")]
    ParamOutOfRange { name: String, detail: String },

    #[error("point {0:?} lies on the boundary x_d = 0")]
    BoundaryPoint(Vec<f64>),

    #[error("point {0:?} is outside the domain")]
    OutOfDomain(Vec<f64>),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("limit integral {integral} inconclusive after {shells} dyadic shells")]
    Inconclusive { integral: String, shells: usize },

    #[error("inconsistent boundary classification: {0}")]
    InconsistentClassification(String),

    #[error("analytic classification needs Hoelder data for b_d near 0")]
    MissingHolderData,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("supermartingale condition likely violated: {0}")]
    ConditionLikelyViolated(String),

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("incompatible data: {0}")]
    Compatibility(String),

    #[error("boundary data missing: {0}")]
    BoundaryDataMissing(String),

    #[error("regression ill-conditioned at date {date}: condition number {condition:e}")]
    RegressionIllConditioned { date: usize, condition: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("finite-difference stencil not monotone at node {node:?}: {detail}")]
    NonMonotoneStencil { node: Vec<f64>, detail: String },

    #[error("linear solver diverged: {0}")]
    SolverDiverged(String),

    #[error("iteration limit {limit} reached, residual {residual:e}")]
    MaxIterations { limit: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::EvaluationFailure { .. } => "model/evaluation-failure",
            Error::AssumptionViolation { .. } => "model/assumption-violation",
            Error::UnknownPreset(_) => "model/unknown-preset",
            Error::ParamOutOfRange { .. } => "model/param-out-of-range",
            Error::BoundaryPoint(_) => "model/boundary-point",
            Error::OutOfDomain(_) => "domain/out-of-domain",
            Error::InvalidDomain(_) => "domain/invalid",
            Error::QuadratureFailure(_) => "boundary/quadrature-failure",
            Error::Inconclusive { .. } => "boundary/inconclusive",
            Error::InconsistentClassification(_) => "boundary/inconsistent",
            Error::MissingHolderData => "boundary/missing-holder-data",
            Error::OutOfRange(_) => "boundary/out-of-range",
            Error::ConditionLikelyViolated(_) => "simulate/condition-likely-violated",
            Error::MissingField(_) => "compatibility/missing-field",
            Error::Compatibility(_) => "compatibility/violation",
            Error::BoundaryDataMissing(_) => "fk/boundary-data-missing",
            Error::RegressionIllConditioned { .. } => "stopping/regression-ill-conditioned",
            Error::GridTooCoarse(_) => "stopping/grid-too-coarse",
            Error::NonMonotoneStencil { .. } => "pde/non-monotone-stencil",
            Error::SolverDiverged(_) => "pde/solver-diverged",
            Error::MaxIterations { .. } => "pde/max-iterations",
            Error::Config(_) => "config/invalid",
        }
    }

    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EvaluationFailure { .. }
                | Error::QuadratureFailure(_)
                | Error::Inconclusive { .. }
                | Error::InconsistentClassification(_)
                | Error::ConditionLikelyViolated(_)
                | Error::RegressionIllConditioned { .. }
                | Error::GridTooCoarse(_)
                | Error::NonMonotoneStencil { .. }
                | Error::SolverDiverged(_)
                | Error::MaxIterations { .. }
        )
    }
}
