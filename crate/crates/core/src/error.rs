//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
///
/// The split matters to callers: `CaseParse`, `CaseValidation`, and `Config`
/// are bad inputs; `Infeasible`, `Topology`, and `NoBoundary` describe a
/// well-formed problem without a usable answer; `Numerical` means a solver
/// broke down; `Contract` flags a call that violated a documented
/// precondition.
#[derive(Debug, Error)]
pub enum Error {
    /// The case file is not valid JSON for the case schema.
    #[error("case parse error: {0}")]
    CaseParse(String),

    /// The case file parsed but its contents are inconsistent.
    #[error("case validation error: {0}")]
    CaseValidation(String),

    /// A contingency or reduction request breaks the network apart.
    #[error("topology error: {0}")]
    Topology(String),

    /// A configuration value is out of range or internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The operating point (or the whole search space) is infeasible.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A linear solve, factorization, or iteration failed numerically.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The gradient vanished; no descent direction exists at this point.
    #[error("stationary gradient: no descent direction at this operating point")]
    StationaryGradient,

    /// The trained or requested model sees only one class.
    #[error("no boundary: {0}")]
    NoBoundary(String),

    /// A bisection lost its bracket (an endpoint became unusable).
    #[error("bisection aborted: {0}")]
    BisectionAborted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
