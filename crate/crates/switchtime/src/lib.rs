//! Switching time optimization for switched dynamical systems.
//!
//! Given a fixed sequence of modes (linear matrices or differentiable vector
//! fields), an initial state and quadratic running/terminal cost weights,
//! this crate finds locally optimal switching interval durations. Each outer
//! iteration linearizes the dynamics over a fixed background time grid and
//! evaluates the cost of the linearized system together with its exact
//! gradient and Hessian from one shared set of matrix exponentials; a
//! second-order active-set method then updates the durations inside the
//! simplex-with-bounds constraint set.
//!
//! Module map:
//! - [`problem`]: problem data, constraint set, grid partition, projection.
//! - [`linalg`]: matrix exponential, block-exponential cost integrals, the
//!   eigendecomposition fast path for fixed linear modes.
//! - [`sensitivity`]: the shared-precomputation evaluation of `J`, `∇J`,
//!   `H_J`.
//! - [`nlpsolve`]: the built-in solver and the external-solver callback
//!   contract.
//! - [`simulate`]: adaptive RK45 integration of the true dynamics for
//!   independent cost verification.
//! - [`schema`]: JSON problem files.
//! - [`benchmarks`]: bundled example problems.

pub mod benchmarks;
pub mod error;
pub mod linalg;
pub mod nlpsolve;
pub mod problem;
pub mod schema;
pub mod sensitivity;
pub mod simulate;

pub use error::{Error, Result};
pub use nlpsolve::{solve, NlpCallbacks, SolveReport, SolverOptions, Termination};
pub use problem::{
    augment_problem, build_partition, project_to_delta, GridPartition, Intervals, ModeDynamics,
    ReferenceSignal, SwitchedProblem,
};
pub use schema::ProblemFile;
pub use sensitivity::{evaluate, frozen_perturbation_cost, CostEvaluation, Evaluator};
pub use simulate::{integrate, linearization_gap, Trajectory};
