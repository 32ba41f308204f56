//! Numerical building blocks shared by the physics modules: nonlinear least
//! squares, Gauss-Hermite quadrature, monotone interpolation and spectral
//! peak finding.

mod lm;
mod pchip;
mod quadrature;
mod spectrum;

pub use lm::{levenberg_marquardt, LmFit, LmOptions};
pub use pchip::Pchip;
pub use quadrature::{gauss_hermite, gaussian_expectation};
pub use spectrum::dominant_frequency;
