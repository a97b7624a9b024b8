//! Bloch modes of glide-plane photonic-crystal waveguides and chiral
//! emitter coupling.
//!
//! The pipeline runs [`geometry`] → [`modesolver`] → [`polarization`] →
//! [`coupling`] → [`optimizer`]; [`io`] and [`cli`] provide the file formats and
//! the command-line front end. Numerical code is generic over [`scalar::Real`]
//! (`f32` or `f64`); the aliases below fix it to `f64`.

// Negated comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod coupling;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod modesolver;
pub mod optimizer;
pub mod polarization;
pub mod scalar;

pub use error::{Error, Result};

pub type SupercellGeometry = geometry::SupercellGeometry<f64>;
pub type DielectricGrid = geometry::DielectricGrid<f64>;
pub type BlochMode = modesolver::BlochMode<f64>;
pub type BandStructure = modesolver::BandStructure<f64>;
pub type DipoleState = polarization::DipoleState<f64>;
pub type EllipseAngles = polarization::EllipseAngles<f64>;
pub type StokesVector = polarization::StokesVector<f64>;
pub type PolarizationField = polarization::PolarizationField<f64>;
pub type DirectionalityResult = coupling::DirectionalityResult<f64>;
pub type OptimizationResult = optimizer::OptimizationResult<f64>;
