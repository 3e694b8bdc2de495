use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid mismatch: expected n_x = {expected}, found n_x = {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("symbol is singular at Fourier mode ({k}, {l})")]
    PoleAtMode { k: usize, l: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown model kind `{0}`")]
    UnknownModel(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("iterate became non-finite after {iterations} iterations")]
    Divergence { iterations: usize },

    #[error("{solver} did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("conjugate gradient breakdown: non-positive curvature {curvature:e} at iteration {iteration}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("step size underflow: h_t = {0:e}")]
    StepUnderflow(f64),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
