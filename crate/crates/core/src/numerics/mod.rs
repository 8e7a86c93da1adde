//! Dense small-scale linear algebra: ridge least squares, a certified QP
//! solver for diagonal-Hessian problems and a discrete Riccati solver.

mod dare;
mod qp;
mod ridge;

pub use dare::{solve_dare, DareSolution, RICCATI_TOL};
pub use qp::{solve_qp, solve_qp_with, ActiveConstraint, QpOptions, QpProblem, QpSolution, KKT_TOL};
pub use ridge::solve_ridge;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gram matrix is singular (smallest pivot {pivot:e})")]
    SingularGram { pivot: f64 },
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("solver exceeded {0} iterations")]
    MaxIterations(usize),
    #[error("riccati iteration did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },
}
