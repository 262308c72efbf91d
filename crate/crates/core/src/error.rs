use thiserror::Error;

/// Errors raised while building geometries, evaluating the tight-binding
/// model or running the coupled solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two atoms came closer than the non-accumulation bound.
    #[error("atoms {i} and {j} are {distance:.4} apart, below the minimum separation {bound}")]
    Accumulation {
        i: usize,
        j: usize,
        distance: f64,
        bound: f64,
    },

    #[error("point ({x}, {y}) lies on the branch cut")]
    BranchCut { x: f64, y: f64 },

    #[error("cluster around site {site} extends past the generated domain")]
    GeometryTooSmall { site: usize },

    #[error("finite-difference hessian asymmetry {0:.3e} exceeds tolerance; check fd_step")]
    DerivativeInconsistency(f64),

    #[error("reference lattice is not an equilibrium: zeroth-order force {0:.3e}")]
    NonEquilibriumReference(f64),

    #[error("displacement is nonzero on far-field site {0}")]
    Inadmissible(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("case D evaluation requested without a dislocation predictor")]
    MissingPredictor,

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("lanczos did not converge: {0}")]
    Lanczos(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("reference solve did not converge: {0}")]
    ReferenceNotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
