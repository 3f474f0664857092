use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Statistics gathered by a rejection loop before it gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PartialStats {
    pub outer_iterations: u64,
    pub estimator_draws: u64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimator draw {value} lies outside the clip interval [-{bound}, {bound}]")]
    ContractViolation { value: f64, bound: f64 },

    #[error(
        "rejection loop hit its budget of {limit} outer iterations \
         ({} estimator draws so far); clip bound or step size is badly tuned",
        .stats.estimator_draws
    )]
    IterationBudget { limit: u64, stats: PartialStats },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("schedule would need {steps} steps, above the limit of {limit}")]
    ScheduleBudget { steps: f64, limit: u64 },

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("Monte Carlo estimate unreliable: effective sample size {ess:.1} < {min}")]
    UnreliableEstimate { ess: f64, min: f64 },

    #[error("unsupported dimension {dim}: {what}")]
    UnsupportedDimension { dim: usize, what: &'static str },

    #[error("prox anchor residual {residual:.3e} exceeds sqrt(d*eta) = {budget:.3e}")]
    AnchorViolation { residual: f64, budget: f64 },

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("invalid cdf: {0}")]
    InvalidCdf(String),

    #[error("backward step t = {t} failed: {source}")]
    Step {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("proximal iteration {n} failed: {source}")]
    ProxIteration {
        n: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
