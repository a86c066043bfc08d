use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Incompatible configuration (grid/model mismatch, shape mismatch, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The propagator blew up.
    #[error("instability at inner step {step}: max |psi| = {max_abs:.3e}")]
    Instability { step: usize, max_abs: f64 },

    /// A constraint that should hold numerically was violated.
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// No usable data left after filtering/validation.
    #[error("empty data: {0}")]
    Empty(String),

    /// Quadrature refinement did not converge.
    #[error("quadrature did not converge: refinement disagreement {0:.3e}")]
    QuadratureDiverged(f64),

    /// Malformed input file.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
