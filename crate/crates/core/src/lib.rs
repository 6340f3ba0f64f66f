//! Nonlinear normal modes of polynomial vector fields computed as zero level
//! sets of Koopman eigenfunctions.
//!
//! The pipeline: build a [`PolynomialVectorField`], decompose its Jacobian
//! ([`SpectralDecomposition`]), compute the identity modes on one conjugate
//! pair ([`koopman::compute_identity_modes`]) and evaluate the resulting
//! parametrization `x = Psi(xi, conj(xi))` ([`manifold`]) or its trajectories
//! ([`dynamics`]).

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod koopman;
pub mod manifold;
pub mod models;
pub mod polyfield;
pub mod spectral;

pub use error::{Error, Result};
pub use koopman::{KoopmanModeTable, ModeSupport};
pub use polyfield::{MultiIndex, PolynomialVectorField};
pub use spectral::SpectralDecomposition;
