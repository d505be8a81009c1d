//! Galerkin solver and numerical verification toolkit for singular
//! quasilinear elliptic systems driven by the Phi-Laplacian
//!
//! ```text
//! -div(phi(|grad u|) grad u) = a1 / (u^alpha1 v^beta1) + b1 u^gamma1 v^sigma1
//! -div(phi(|grad v|) grad v) = a2 / (u^beta2 v^alpha2) + b2 u^sigma2 v^gamma2
//! ```
//!
//! with homogeneous Dirichlet data. The singular terms are regularized by
//! `eps > 0`, the regularized systems are solved with damped Newton on P1
//! finite elements, and `eps` is driven toward zero by continuation.

pub mod comparison;
pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod nfunction;
pub mod numerics;
pub mod runner;
pub mod solver;
pub mod system;

pub use error::{Error, Result};
pub use grid::{DiscreteField, Geometry, Mesh};
pub use nfunction::{NFunction, PhiKernel};
pub use system::{Structure, SystemSpec};
