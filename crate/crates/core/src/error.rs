use thiserror::Error;

pub type Result<T> = std::result::Result<T, HydroError>;

#[derive(Debug, Error)]
pub enum HydroError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model `{0}` (expected one of: independent, sep, kmp)")]
    UnknownModel(String),

    #[error(
        "density outside admissible interval of model `{model}`: \
         range [{min:.6e}, {max:.6e}] not inside ({lo}, {hi}) with margin {margin:e}"
    )]
    Inadmissible {
        model: String,
        min: f64,
        max: f64,
        lo: f64,
        hi: f64,
        margin: f64,
    },

    #[error(
        "response operator is near-degenerate: min mobility {min_chi:.3e} below {threshold:e}"
    )]
    Conditioning { min_chi: f64, threshold: f64 },

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:.3e})")]
    SolverStalled { iterations: usize, residual: f64 },

    #[error("degenerate plane: Z = {z:.3e} below threshold {threshold:.3e}")]
    DegeneratePlane { z: f64, threshold: f64 },

    #[error(
        "model `{model}` failed derivative check for {what}: error {error:.3e} at rho = {rho}"
    )]
    ModelVerification {
        model: String,
        what: &'static str,
        rho: f64,
        error: f64,
    },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl HydroError {
    /// Numerical failures (as opposed to caller mistakes).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            HydroError::Inadmissible { .. }
                | HydroError::Conditioning { .. }
                | HydroError::SolverStalled { .. }
                | HydroError::DegeneratePlane { .. }
        )
    }
}
