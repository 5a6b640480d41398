//! Density estimation on 2-D toy problems with piecewise-invertible flows.
//!
//! The library implements two coupling-layer flow families over a standard
//! normal base: an affine-coupling baseline, and RAD layers whose scalar
//! nonlinearity is a piecewise-linear fold with a discrete branch latent and
//! a gating network. Both support exact log-likelihood, exact sampling, and
//! deterministic training, plus SVG/CSV diagnostics of the learned maps.

pub mod autodiff;
pub mod coupling;
pub mod data;
pub mod fold;
pub mod model;
pub mod report;
pub mod train;

mod error;

pub use error::Error;
