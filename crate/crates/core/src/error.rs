use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("normal vector is not unit length (|rho| = {0})")]
    NonUnitNormal(f64),

    #[error("recession estimate diverged along direction {direction:?}: increments {increments:?}")]
    RecessionDivergent {
        direction: Vec<f64>,
        increments: Vec<f64>,
    },

    #[error("support of radius {radius:e} around {center:?} is under-resolved: cell size {cell_size:e} exceeds {limit:e}")]
    Resolution {
        center: Vec<f64>,
        radius: f64,
        cell_size: f64,
        limit: f64,
    },

    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("integrand `{0}` has no analytic gradient")]
    MissingGradient(String),

    #[error("integrand `{0}` is not positively homogeneous")]
    NotHomogeneous(String),

    #[error("nonnegative integrand required, found value {value:e}")]
    NegativeIntegrand { value: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
