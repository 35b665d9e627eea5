use alloc::string::String;
use thiserror::Error;

/// Failure modes shared across the crate.
///
/// Variants carry a human-readable detail string; callers that need to branch
/// on the failure kind match on the variant, not the message.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An exponent or coefficient triple violates its defining constraints.
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    /// A point lies outside the domain of the requested evaluation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point is too close to a branch surface or a coordinate plane for a
    /// discontinuous quantity (e.g. a Hessian) to be well defined there.
    #[error("boundary error: {0}")]
    Boundary(String),

    /// A tree/cell address does not exist at the requested level.
    #[error("index error: level {level}, index {index}")]
    Index { level: u32, index: u64 },

    /// Split weights of a filtration tree are not a probability vector.
    #[error("probability error: {0}")]
    Probability(String),

    /// Requested moments cannot be realized by any nonnegative cascade of the
    /// given depth.
    #[error("infeasible moments: {0}")]
    InfeasibleMoments(String),

    /// A stochastic simulation failed an internal consistency test.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// A quadrature did not converge to the requested accuracy.
    #[error("quadrature error: {0}")]
    Quadrature(String),

    /// A mollification or closeness parameter is invalid for the given data.
    #[error("epsilon error: {0}")]
    Epsilon(String),

    /// A coefficient search could not produce a validated result.
    #[error("search failure: {0}")]
    SearchFailure(String),
}
