use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A graph operation received operands of the wrong shape.
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    NodeShape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid user-supplied input (configuration, measure spec, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// Graph misuse, e.g. backward on a node the graph does not own.
    #[error("graph state error: {0}")]
    State(String),

    /// NaN or infinity where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An iterative solver ran out of iterations.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Optimization blew up.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures caused by floating-point blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence(_))
    }
}
