//! Interpolated variational physics-informed neural networks for
//! second-order elliptic boundary-value problems.
//!
//! A network `w` is mapped to `B w = ubar + Phi w`, which satisfies the
//! Dirichlet data exactly, interpolated onto a Lagrange space on a coarse
//! mesh, and trained so that the weak residuals against piecewise
//! polynomial test functions on a nested fine mesh vanish.

pub mod assembly;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod lifting;
pub mod mesh;
pub mod network;
pub mod problems;
pub mod quadrature;
pub mod reporting;
pub mod sparse;
pub mod spurious;
pub mod training;

pub use error::{Error, Result};
