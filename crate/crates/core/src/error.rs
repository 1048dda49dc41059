use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tolerance {0} (must be positive and finite)")]
    InvalidTol(f64),

    #[error("argument {value} outside supported range {range}")]
    OutOfRange { value: f64, range: &'static str },

    #[error("degenerate Hessian at {position:?}: |eigenvalue| = {eigenvalue:e} below threshold")]
    DegenerateHessian { position: Vec<f64>, eigenvalue: f64 },

    #[error("gradient flow did not reach a minimum ({reason})")]
    NotConverged { reason: String },

    #[error("no separating saddle point for the reference minimum")]
    NoSeparatingSaddle,

    #[error("precondition {hypothesis} violated: {detail}")]
    PreconditionViolated {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("bottom of the harmonic spectrum is not carried by the reference minimum")]
    PatternViolation,

    #[error("|I_min| = {0} exceeds the dense-search cap of {1}")]
    CapExceeded(usize, usize),

    #[error("g(x0) = 0: leading Laplace term vanishes")]
    ZeroDensity,

    #[error("quadrature tolerance not met (estimated error {0:e})")]
    ToleranceNotMet(f64),

    #[error("domain contains no interior grid node")]
    EmptyDomain,

    #[error("cut near critical point {index} is not resolved by the grid: {detail}")]
    UnresolvedCut { index: usize, detail: String },

    #[error("iterative eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("all replicas absorbed within one step; reduce the time step")]
    Extinction,

    #[error("too few surviving trajectories ({0}) for the conditioned estimator")]
    InsufficientSurvivors(usize),

    #[error("trajectory did not exit before the time horizon")]
    HorizonExceeded,

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
