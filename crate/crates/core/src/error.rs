use thiserror::Error;

pub type Result<T> = std::result::Result<T, MfgError>;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("unsupported dimension {0}: only d = 1 and d = 2 are supported")]
    UnsupportedDimension(usize),

    #[error("invalid grid size {0}: points per axis must be a power of two and at least 8")]
    InvalidGridSize(usize),

    #[error("field has {got} values, grid expects {expected}")]
    FieldLength { expected: usize, got: usize },

    #[error("non-finite value {value} at grid index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("density {value} at grid index {index:?} is outside the density domain {domain}")]
    DensityDomain {
        index: Option<usize>,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid Hamiltonian: {0}")]
    InvalidSpec(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("Newton did not converge at viscosity {eps:e}: residual {residual:e} after {iterations} iterations")]
    NonConvergence {
        eps: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("density collapsed to {min_density:e} during line search at viscosity {eps:e}")]
    DensityCollapse { eps: f64, min_density: f64 },

    #[error("|D_mH| = {value:e} vanishes at grid index {index}; the elliptic reduction is not available")]
    VanishingDmH { index: usize, value: f64 },

    #[error("singular matrix {what} at grid index {index}")]
    SingularPointMatrix { what: &'static str, index: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("kernel suspected: smallest singular value {sigma_min:e} is below {threshold:e} (discrete kernel triviality fails)")]
    KernelSuspected { sigma_min: f64, threshold: f64 },

    #[error("iterative solver stalled: relative residual {0:e}")]
    IterativeStall(f64),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
