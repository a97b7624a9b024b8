use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("resolution error: grid spacing {spacing:.4} nm along {axis} exceeds mesh limit {limit:.4} nm")]
    Resolution {
        axis: &'static str,
        spacing: f64,
        limit: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("eigensolver did not converge after {iterations} iterations (worst relative residual {residual:.3e} on band {band})")]
    Solver {
        iterations: usize,
        band: usize,
        residual: f64,
    },

    #[error("degenerate Poynting flux: |flux| = {flux:.3e} is below 1e-12 of the energy scale {energy:.3e}")]
    DegenerateFlux { flux: f64, energy: f64 },

    #[error("undefined polarization: {0}")]
    Polarization(String),

    #[error("averaging mask is empty")]
    EmptyMask,

    #[error("grid shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("missing component '{0}'")]
    MissingComponent(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
