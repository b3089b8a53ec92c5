use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix or coefficient violates a structural requirement (symmetry,
    /// positive definiteness, ellipticity).
    #[error("structural error: {0}")]
    Structural(String),

    /// The requested resolution or configuration cannot be honored.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (defect {defect:.3e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        defect: f64,
    },

    /// A query needs data that was not supplied.
    #[error("usage error: {0}")]
    Usage(String),

    /// The stochastic flow lost invertibility.
    #[error("degenerate flow at t={t}: det = {det:.3e} for seed {seed:?}")]
    Degenerate { t: f64, det: f64, seed: Vec<f64> },

    /// A point lies outside the region covered by stored data.
    #[error("extrapolation error: {0}")]
    Extrapolation(String),

    /// The coercivity margin of the transformed diffusion is not positive.
    #[error("coercivity failure: margin {margin:.3e} at t={t}, x={x:?}")]
    Coercivity { margin: f64, t: f64, x: Vec<f64> },

    /// A kernel assembly stage failed; wraps the cause.
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
