use thiserror::Error;

/// Failures reported by the solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cross-check failed for {name}: closed form {closed}, bisection {bracketed}")]
    CrossCheck {
        name: &'static str,
        closed: f64,
        bracketed: f64,
    },
    #[error("residual of {name} is {residual:e}")]
    Residual { name: &'static str, residual: f64 },
    #[error("series construction failed: {0}")]
    Series(String),
    #[error("step size underflow at x = {x}")]
    StepFailure { x: f64 },
    #[error("no nodal transition above {k} up to v = {ceiling}")]
    NoTransition { k: u32, ceiling: f64 },
    #[error("nodal count jumps from {lo} to {hi} across the bracket")]
    NonUnitJump { lo: u32, hi: u32 },
    #[error("no converged solution in bracket [{v_lo}, {v_hi}]: {reason}")]
    NoConvergence { v_lo: f64, v_hi: f64, reason: String },
    #[error("angle lift undefined at x = {x}")]
    UndefinedLift { x: f64 },
    #[error("angle did not settle before x = {x}")]
    NoSettle { x: f64 },
    #[error("profile left [-pi, pi] at x = {x}")]
    Divergence { x: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// True for failures caused by the inputs rather than the numerics.
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::InvalidInput(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
