//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Problem data violates a structural requirement (symmetry, PSD-ness,
    /// horizon, grid size, bound ordering).
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The interval vector cannot be partitioned or is outside the
    /// constraint set.
    #[error("infeasible intervals: {0}")]
    Infeasible(String),

    /// The constraint set is empty: the bounds cannot sum to the horizon.
    #[error("empty constraint set: {0}")]
    EmptyConstraintSet(String),

    /// A NaN or infinity showed up where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// State propagation blew up; the candidate intervals drive an unstable
    /// mode too long for the linearized model to stay meaningful.
    #[error("state propagation overflow (norm {0:.3e})")]
    Overflow(f64),

    /// The adaptive integrator could not meet the tolerance with any
    /// representable step size.
    #[error("step size underflow at t = {0}")]
    StepSizeUnderflow(f64),

    /// The eigendecomposition fast path was requested for a mode flagged for
    /// the dense-exponential fallback.
    #[error("mode {0} is not diagonalizable; use the dense exponential path")]
    NotDiagonalizable(usize),

    /// A linear solve inside a kernel failed (singular system).
    #[error("singular linear system in {0}")]
    Singular(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
