use thiserror::Error;

/// Failure modes shared by every numerical routine in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the region where the function is defined or supported.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative method ran out of iterations or lost its bracket.
    #[error("did not converge: {0}")]
    NonConvergence(String),
    /// The requested target cannot be reached by the model (e.g. x0 too large for N/n_c).
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Structurally invalid input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    /// A simulated trajectory exceeded its configured ceiling.
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    /// A filtering step removed everything.
    #[error("empty result: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
