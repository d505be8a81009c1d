use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("s*phi(s) is not strictly increasing near s = {at:e}")]
    NonMonotoneKernel { at: f64 },

    #[error("exponent out of range: {0}")]
    ExponentOutOfRange(String),

    #[error("no bracket found for target {target:e}")]
    BracketFailure { target: f64 },

    #[error("Sobolev conjugate integral diverges at 0 (decay rate {rate:e})")]
    DivergentIntegral { rate: f64 },

    #[error("bound `{check}` violated at rho = {rho:e}, t = {t:e} (relative margin {margin:e})")]
    BoundViolation {
        check: String,
        rho: f64,
        t: f64,
        margin: f64,
    },

    #[error("element {0} has zero measure")]
    DegenerateElement(usize),

    #[error("residual entry {index} is not finite")]
    NonFiniteResidual { index: usize },

    #[error("linear solve hit a zero pivot at row {0}")]
    SingularMatrix(usize),

    #[error("Newton did not converge in {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("line search stalled at iteration {iter} (residual {residual:e})")]
    LineSearchStall { iter: usize, residual: f64 },

    #[error("solution is negative at node {node} (value {value:e})")]
    NegativeSolution { node: usize, value: f64 },

    #[error("gamma_i + sigma_i >= ell - 1 for equation {which}: {sum} >= {limit}")]
    ExponentViolation { which: usize, sum: f64, limit: f64 },

    #[error("barrier solution vanishes identically")]
    ZeroBarrier,

    #[error("hypothesis `{hypothesis}` fails: {detail}")]
    HypothesisFailure { hypothesis: String, detail: String },

    #[error("ordering u1 <= u2 violated at node {node} (u1 - u2 = {excess:e})")]
    OrderingViolation { node: usize, excess: f64 },

    #[error("t -> Phi(t^(1/ell)) not convex near t = {at:e} (defect {defect:e})")]
    ConvexityViolation { at: f64, defect: f64 },

    #[error("continuation stage {stage} failed: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures raised by the nonlinear solver rather than by input
    /// validation.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NoConvergence { .. }
            | Error::LineSearchStall { .. }
            | Error::NegativeSolution { .. }
            | Error::NonFiniteResidual { .. }
            | Error::SingularMatrix(_)
            | Error::ZeroBarrier => true,
            Error::Stage { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
