use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The assembled matrix could not be factored. Under the monotone stencil
    /// with unit diffusion this indicates an assembly bug.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    LinearResidual { residual: f64, tolerance: f64 },

    /// The adjoint generator does not have a one-dimensional null space.
    #[error("stationary density is not unique: {0}")]
    NullSpace(String),

    #[error("linear program is infeasible: {0}")]
    Infeasible(String),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("linear program did not terminate within {0} pivots")]
    PivotLimit(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
