use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("mixture density is zero at observation {index}")]
    ZeroDensity { index: usize },
    #[error("no start converged to a local optimum for {components} components")]
    NoLocalOptimum { components: usize },
    #[error("random start infeasible after {attempts} attempts")]
    StartInfeasible { attempts: usize },
    #[error("log-likelihood decreased from {smaller_g} to {larger_g} components ({ll_small} > {ll_large})")]
    LikelihoodDecreased {
        smaller_g: usize,
        larger_g: usize,
        ll_small: f64,
        ll_large: f64,
    },
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit {0} exceeded")]
    IterationLimit(usize),
    #[error("cell not found for component tuple {0:?}")]
    CellNotFound(Vec<usize>),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("singular system: {0}")]
    Singular(String),
    #[error("component {0} has zero likelihood at every time point")]
    DeadComponent(usize),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("nonstationary autoregressive polynomial")]
    Nonstationary,
    #[error("missing success probability for horizon {0}")]
    MissingHorizon(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
